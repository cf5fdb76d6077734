//! Experiment configuration.
//!
//! Every section is optional; omitted keys take the defaults below and the
//! resolved document is written back into the run manifest.

use std::path::Path;

use fermimf_core::lattice::{make_grid, ExternalPotential, Geometry, Grid, Potential};
use fermimf_core::tdhf::{Scheme, StepOptions};
use serde::{Deserialize, Serialize};

use crate::error::RunError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ExperimentConfig {
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub scaling: ScalingSection,
    #[serde(default)]
    pub potential: PotentialSection,
    #[serde(default)]
    pub init: InitSection,
    #[serde(default)]
    pub evolve: EvolveSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
    #[serde(default)]
    pub fdll: FdllSection,
    #[serde(default)]
    pub wigner: WignerSection,
    #[serde(default)]
    pub vlasov: VlasovSection,
    #[serde(default)]
    pub bench: BenchSection,
    #[serde(default)]
    pub fock: FockSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeometryKind {
    Torus,
    Box,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct GridSection {
    pub d: usize,
    pub n: usize,
    #[serde(rename = "L")]
    pub length: f64,
    pub geometry: GeometryKind,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { d: 1, n: 64, length: 2.0 * std::f64::consts::PI, geometry: GeometryKind::Torus }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ScalingSection {
    #[serde(rename = "N")]
    pub n_particles: usize,
    /// Defaults to `N^{-1/3}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
}

impl Default for ScalingSection {
    fn default() -> Self {
        Self { n_particles: 1, epsilon: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PotentialKindCfg {
    Coulomb3d,
    SoftCoulomb,
    Gaussian,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ExternalSection {
    #[serde(default)]
    pub quadratic: f64,
    #[serde(default)]
    pub quartic: f64,
}

impl Default for ExternalSection {
    fn default() -> Self {
        Self { quadratic: 0.0, quartic: 0.0 }
    }
}

impl From<ExternalSection> for ExternalPotential {
    fn from(e: ExternalSection) -> Self {
        ExternalPotential::new(e.quadratic, e.quartic)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct PotentialSection {
    pub kind: PotentialKindCfg,
    /// Softening length of `soft-coulomb`.
    pub a: f64,
    /// Width and amplitude of `gaussian`.
    pub sigma: f64,
    pub amplitude: f64,
    pub sign: f64,
    pub exchange: bool,
    #[serde(default)]
    pub external: ExternalSection,
}

impl Default for PotentialSection {
    fn default() -> Self {
        Self {
            kind: PotentialKindCfg::Zero,
            a: 0.1,
            sigma: 1.0,
            amplitude: 1.0,
            sign: 1.0,
            exchange: true,
            external: ExternalSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Generator {
    FermiSea,
    Trapped,
    Coherent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct InitSection {
    pub generator: Generator,
    /// Trap for `trapped`; defaults to `potential.external`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trap: Option<ExternalSection>,
    /// Packet width `sigma * eps^sigma-power` for `coherent`.
    pub sigma: f64,
    pub sigma_power: f64,
    pub x0: f64,
    pub v0: f64,
}

impl Default for InitSection {
    fn default() -> Self {
        Self { generator: Generator::Trapped, trap: None, sigma: 1.0, sigma_power: 0.5, x0: 0.0, v0: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeCfg {
    Strang,
    Midpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct EvolveSection {
    #[serde(rename = "T")]
    pub t_final: f64,
    pub dt: f64,
    pub scheme: SchemeCfg,
    pub stride: usize,
    /// Re-orthonormalize every `reortho` steps; 0 disables it.
    pub reortho: usize,
    /// Largest tolerated Gram error before the run aborts.
    pub gram_guard: f64,
}

impl Default for EvolveSection {
    fn default() -> Self {
        Self { t_final: 1.0, dt: 1e-3, scheme: SchemeCfg::Midpoint, stride: 100, reortho: 50, gram_guard: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightCfg {
    Position,
    Gradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct DiagnosticsSection {
    pub p: f64,
    pub allow_small_p: bool,
    pub weights: Vec<WeightCfg>,
    /// Evenly spaced trajectory samples to scan; 1 scans the initial data only.
    pub snapshots: usize,
    /// Centers per axis of the trace-norm check; 0 skips it.
    pub z_lattice: usize,
    pub r_list: Vec<f64>,
    pub delta: f64,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        Self {
            p: 6.0,
            allow_small_p: false,
            weights: vec![WeightCfg::Position, WeightCfg::Gradient],
            snapshots: 1,
            z_lattice: 0,
            r_list: vec![0.5, 1.0, 2.0],
            delta: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct FdllSection {
    pub r_min: f64,
    pub r_max: f64,
    pub nodes_per_decade: usize,
    pub s_list: Vec<f64>,
}

impl Default for FdllSection {
    fn default() -> Self {
        Self { r_min: 1e-3, r_max: 1e3, nodes_per_decade: 64, s_list: vec![0.1, 0.5, 1.0, 2.0, 10.0] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RangeCfg {
    Full,
    Local,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct WignerSection {
    /// Velocity samples; defaults to `2 n`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nv: Option<usize>,
    pub range: RangeCfg,
}

impl Default for WignerSection {
    fn default() -> Self {
        Self { nv: None, range: RangeCfg::Local }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct VlasovSection {
    pub dt: f64,
    pub max_cfl: f64,
    /// Semiclassical parameters to sweep; empty uses `scaling.epsilon`.
    pub epsilons: Vec<f64>,
    pub sample_every: f64,
}

impl Default for VlasovSection {
    fn default() -> Self {
        Self { dt: 0.05, max_cfl: 1.0, epsilons: Vec::new(), sample_every: 0.25 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct BenchSection {
    #[serde(rename = "N")]
    pub n_particles: usize,
    pub n: usize,
    pub coupling_lambda: Vec<f64>,
    /// Time at which the split-step run is checked against the dense exponential.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_time: Option<f64>,
    pub oracle_dt: f64,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self { n_particles: 2, n: 32, coupling_lambda: vec![1.0], oracle_time: None, oracle_dt: 2e-5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct FockSection {
    #[serde(rename = "M")]
    pub modes: usize,
    #[serde(rename = "N")]
    pub n_particles: usize,
    pub lemma_draws: usize,
    /// Modes of the random second-quantization suite.
    pub lemma_modes: usize,
    pub identity_checks: bool,
}

impl Default for FockSection {
    fn default() -> Self {
        Self { modes: 10, n_particles: 3, lemma_draws: 100, lemma_modes: 6, identity_checks: true }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    #[serde(default)]
    pub checkpoints: bool,
}

fn config_err(path: &str, message: impl Into<String>) -> RunError {
    RunError::Config { path: path.into(), message: message.into() }
}

/// Turns a serde failure into a config error naming the offending key.
fn located(path: String, message: String) -> RunError {
    let key = message
        .strip_prefix("unknown field `")
        .and_then(|rest| rest.split('`').next())
        .map(str::to_owned);
    let path = match key {
        Some(k) if path == "." || path.is_empty() => k,
        Some(k) if path != k && !path.ends_with(&format!(".{k}")) => format!("{path}.{k}"),
        _ => path,
    };
    RunError::Config { path, message }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, RunError> {
        let de = toml::Deserializer::parse(text).map_err(|e| config_err("<document>", e.to_string()))?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            located(path, inner.message().to_string())
        })
    }

    pub fn from_json(value: serde_json::Value) -> Result<Self, RunError> {
        serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            located(path, e.into_inner().to_string())
        })
    }

    /// Reads a TOML config, or a JSON manifest written by an earlier run.
    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path).map_err(|e| RunError::Io(format!("{}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            let mut value: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| config_err("<document>", e.to_string()))?;
            if let Some(cfg) = value.get_mut("config") {
                value = cfg.take();
            }
            Self::from_json(value)
        } else {
            Self::from_toml(&text)
        }
    }

    /// Fills derived defaults and validates ranges.
    pub fn resolve(mut self) -> Result<Self, RunError> {
        let g = &self.grid;
        if !(1..=3).contains(&g.d) {
            return Err(config_err("grid.d", format!("dimension must be 1, 2 or 3 (got {})", g.d)));
        }
        if g.n < 2 {
            return Err(config_err("grid.n", format!("need at least 2 points per axis (got {})", g.n)));
        }
        if !(g.length > 0.0) {
            return Err(config_err("grid.L", format!("box length must be positive (got {})", g.length)));
        }
        if self.scaling.n_particles == 0 {
            return Err(config_err("scaling.N", "particle number must be positive"));
        }
        let eps = *self.scaling.epsilon.get_or_insert((self.scaling.n_particles as f64).powf(-1.0 / 3.0));
        if !(eps > 0.0) {
            return Err(config_err("scaling.epsilon", format!("epsilon must be positive (got {eps})")));
        }
        let p = &self.potential;
        if p.sign != 1.0 && p.sign != -1.0 {
            return Err(config_err("potential.sign", format!("sign must be +1 or -1 (got {})", p.sign)));
        }
        if p.kind == PotentialKindCfg::SoftCoulomb && !(p.a > 0.0) {
            return Err(config_err("potential.a", format!("softening must be positive (got {})", p.a)));
        }
        if p.kind == PotentialKindCfg::Gaussian && !(p.sigma > 0.0) {
            return Err(config_err("potential.sigma", format!("width must be positive (got {})", p.sigma)));
        }
        if self.init.generator == Generator::Trapped && self.init.trap.is_none() {
            self.init.trap = Some(self.potential.external);
        }
        if self.init.generator == Generator::Coherent && !(self.init.sigma > 0.0) {
            return Err(config_err("init.sigma", "packet width must be positive"));
        }
        let e = &self.evolve;
        if !(e.t_final > 0.0) {
            return Err(config_err("evolve.T", format!("final time must be positive (got {})", e.t_final)));
        }
        if !(e.dt > 0.0) || e.dt > e.t_final {
            return Err(config_err("evolve.dt", format!("need 0 < dt <= T (got {})", e.dt)));
        }
        if e.stride == 0 {
            return Err(config_err("evolve.stride", "stride must be positive"));
        }
        let d = &self.diagnostics;
        if !(d.p >= 1.0) {
            return Err(config_err("diagnostics.p", format!("exponent must be >= 1 (got {})", d.p)));
        }
        if d.snapshots == 0 {
            return Err(config_err("diagnostics.snapshots", "need at least one snapshot"));
        }
        if d.r_list.iter().any(|r| !(*r > 0.0)) {
            return Err(config_err("diagnostics.r-list", "radii must be positive"));
        }
        if !(d.delta > 0.0 && d.delta < 0.5) {
            return Err(config_err("diagnostics.delta", format!("delta must lie in (0, 1/2) (got {})", d.delta)));
        }
        if self.fdll.s_list.iter().any(|s| !(*s > 0.0)) {
            return Err(config_err("fdll.s-list", "separations must be positive"));
        }
        if self.wigner.nv.is_none() {
            self.wigner.nv = Some(2 * self.grid.n);
        }
        let v = &self.vlasov;
        if !(v.dt > 0.0) {
            return Err(config_err("vlasov.dt", "time step must be positive"));
        }
        if !(v.max_cfl > 0.0) {
            return Err(config_err("vlasov.max-cfl", "CFL bound must be positive"));
        }
        if v.epsilons.iter().any(|e| !(*e > 0.0)) {
            return Err(config_err("vlasov.epsilons", "epsilons must be positive"));
        }
        if !(v.sample_every > 0.0) {
            return Err(config_err("vlasov.sample-every", "sampling interval must be positive"));
        }
        if self.vlasov.epsilons.is_empty() {
            self.vlasov.epsilons = vec![eps];
        }
        if self.bench.coupling_lambda.is_empty() {
            return Err(config_err("bench.coupling-lambda", "need at least one coupling"));
        }
        if self.bench.n_particles == 0 {
            return Err(config_err("bench.N", "particle number must be positive"));
        }
        if !(self.bench.oracle_dt > 0.0) {
            return Err(config_err("bench.oracle-dt", "time step must be positive"));
        }
        if !(1..=8).contains(&self.fock.lemma_modes) {
            return Err(config_err("fock.lemma-modes", "need 1 to 8 modes"));
        }
        if self.fock.n_particles == 0 || self.fock.n_particles > self.fock.modes {
            return Err(config_err("fock.N", format!("need 1 <= N <= M (got N = {})", self.fock.n_particles)));
        }
        Ok(self)
    }

    pub fn eps(&self) -> f64 {
        self.scaling.epsilon.unwrap_or((self.scaling.n_particles as f64).powf(-1.0 / 3.0))
    }

    pub fn make_grid(&self) -> Result<Grid, RunError> {
        let g = &self.grid;
        let geometry = match g.geometry {
            GeometryKind::Torus => Geometry::Torus,
            GeometryKind::Box => Geometry::Box,
        };
        make_grid(g.d, g.n, g.length, geometry).map_err(|e| config_err("grid", e.to_string()))
    }

    pub fn potential(&self) -> Result<Potential, RunError> {
        let p = &self.potential;
        let base = match p.kind {
            PotentialKindCfg::Coulomb3d => Ok(Potential::coulomb3d()),
            PotentialKindCfg::SoftCoulomb => Potential::soft_coulomb(p.a),
            PotentialKindCfg::Gaussian => Potential::gaussian(p.sigma, p.amplitude),
            PotentialKindCfg::Zero => Ok(Potential::zero()),
        }
        .map_err(|e| config_err("potential", e.to_string()))?;
        if p.kind == PotentialKindCfg::Zero {
            return Ok(base);
        }
        base.with_sign(p.sign).map_err(|e| config_err("potential.sign", e.to_string()))
    }

    pub fn external(&self) -> ExternalPotential {
        self.potential.external.into()
    }

    pub fn step_options(&self) -> StepOptions {
        StepOptions {
            scheme: match self.evolve.scheme {
                SchemeCfg::Strang => Scheme::Strang,
                SchemeCfg::Midpoint => Scheme::Midpoint,
            },
            reortho_every: (self.evolve.reortho > 0).then_some(self.evolve.reortho),
            ..StepOptions::default()
        }
    }

    /// Canonical JSON form used for hashing and the manifest.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_takes_defaults() {
        let cfg = ExperimentConfig::from_toml("").unwrap().resolve().unwrap();
        assert_eq!(cfg.grid, GridSection::default());
        assert_eq!(cfg.scaling.epsilon, Some(1.0));
        assert_eq!(cfg.wigner.nv, Some(128));
    }

    #[test]
    fn unknown_key_is_named() {
        let err = ExperimentConfig::from_toml("[grid]\nm = 3\n").unwrap_err();
        match err {
            RunError::Config { path, .. } => assert_eq!(path, "grid.m"),
            other => panic!("{other:?}"),
        }
        let err = ExperimentConfig::from_toml("[grids]\nn = 3\n").unwrap_err();
        assert!(matches!(err, RunError::Config { ref path, .. } if path == "grids"));
    }

    #[test]
    fn bad_value_is_named() {
        let err = ExperimentConfig::from_toml("[evolve]\ndt = -1.0\n").unwrap().resolve().unwrap_err();
        assert!(matches!(err, RunError::Config { ref path, .. } if path == "evolve.dt"));
        let err = ExperimentConfig::from_toml("[potential]\nkind = \"yukawa\"\n").unwrap_err();
        assert!(matches!(err, RunError::Config { ref path, .. } if path == "potential.kind"));
    }

    #[test]
    fn json_round_trip() {
        let cfg = ExperimentConfig::from_toml("[scaling]\nN = 8\n[init]\ngenerator = \"fermi-sea\"\n")
            .unwrap()
            .resolve()
            .unwrap();
        let back = ExperimentConfig::from_json(cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }
}
