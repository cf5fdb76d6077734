//! Run directories: manifest, metrics stream, arrays and tables.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use fermimf_core::fmf::{FmfArray, VERSION as FMF_VERSION};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::RunError;

/// Metric names a run may emit, with their meaning.
pub const METRICS: &[(&str, &str)] = &[
    ("gram_error", "||G - I||_F of the orbital Gram matrix"),
    ("idempotency_error", "||G^2 - G||_F"),
    ("kinetic_energy", "sum_j <f_j, -eps^2 Laplacian f_j> / N"),
    ("energy_total", "Hartree-Fock energy"),
    ("energy_drift", "|E(t) - E(0)| / |E(0)|, absolute when |E(0)| <= 1e-12"),
    ("hs_from_initial", "||omega_t - omega_0||_HS / sqrt(N)"),
    ("scan_ratio_position", "sum_i (||rho_i||_1 + ||rho_i||_p) / (N eps) for the position weights"),
    ("scan_ratio_gradient", "the same sum for the eps-gradient weights"),
    ("tr1_samples", "number of (r, z) samples of the trace-norm bound"),
    ("tr1_violations", "samples with a negative, zero or non-finite side"),
    ("tr1_ratio_min", "smallest lhs / rhs_shape"),
    ("tr1_ratio_max", "largest lhs / rhs_shape"),
    ("fdll_max_rel_error", "largest |s V(s) - 1| over the separations"),
    ("wigner_total", "sum W h dv, equal to 2 pi N"),
    ("wigner_position_marginal_error", "max |marginal - rho| / max rho"),
    ("wigner_velocity_marginal_error", "max deviation of the velocity marginal from the momentum weights"),
    ("hf_vlasov_sup", "array [eps, sup_t L1, sup_t L2] of HF-vs-Vlasov distances"),
    ("bench_sup_distance", "array [lambda, sup_t ||gamma - omega||_HS / sqrt(N)]"),
    ("bench_oracle_error", "relative error of the split-step run against the dense exponential"),
    ("excitations", "<N> of the fluctuation vector"),
    ("excitation_identity_gap", "|<N> - 2 tr (gamma - omega)(1 - omega)|"),
    ("completion_gap", "|<N>| difference between two completions of omega_t"),
    ("fluctuation_norm_error", "| ||U_N(t) xi|| - 1 |"),
    ("car_error", "max entry of the CAR defects"),
    ("bog_error", "defect of the particle-hole conjugation on random vectors"),
    ("slater_error", "distance of R Omega from the Slater state up to phase"),
    ("identity_error", "excitation identity defect on random Fock vectors"),
    ("lemma_draws", "random draws per second-quantization bound"),
    ("lemma_violations", "violations of the second-quantization bounds"),
];

pub fn is_registered(name: &str) -> bool {
    METRICS.iter().any(|(n, _)| *n == name)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetricValue {
    Scalar(f64),
    Array { array: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_id: String,
    pub t: f64,
    pub name: String,
    pub value: MetricValue,
    pub provenance: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub run_id: String,
    pub subcommand: String,
    pub seed: u64,
    pub fermimf_version: String,
    pub fmf_version: u32,
    pub config: serde_json::Value,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self, RunError> {
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| RunError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| RunError::Config { path: path.display().to_string(), message: e.to_string() })
    }

    pub fn experiment(&self) -> Result<ExperimentConfig, RunError> {
        ExperimentConfig::from_json(self.config.clone())
    }
}

pub fn read_metrics(dir: &Path) -> Result<Vec<MetricsRecord>, RunError> {
    let path = dir.join("metrics.jsonl");
    let text = std::fs::read_to_string(&path).map_err(|e| RunError::Io(format!("{}: {e}", path.display())))?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}

/// Content hash of the resolved config and seed, independent of the output location.
pub fn run_id(cfg: &ExperimentConfig, seed: u64) -> String {
    let mut value = cfg.to_json();
    if let Some(map) = value.as_object_mut() {
        map.remove("output");
    }
    let mut hasher = Sha256::new();
    hasher.update(value.to_string().as_bytes());
    hasher.update(seed.to_le_bytes());
    hasher.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Open run directory collecting metrics and artifacts.
pub struct RunDir {
    pub dir: PathBuf,
    pub run_id: String,
    subcommand: String,
    seed: u64,
    config: serde_json::Value,
    records: Vec<(f64, String, MetricValue, String)>,
    outputs: Vec<String>,
}

impl RunDir {
    pub fn create(dir: &Path, subcommand: &str, cfg: &ExperimentConfig, seed: u64) -> Result<Self, RunError> {
        std::fs::create_dir_all(dir).map_err(|e| RunError::Io(format!("{}: {e}", dir.display())))?;
        let mut config = cfg.to_json();
        if let Some(out) = config.get_mut("output").and_then(|o| o.as_object_mut()) {
            out.remove("dir");
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            run_id: run_id(cfg, seed),
            subcommand: subcommand.into(),
            seed,
            config,
            records: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn metric(&mut self, t: f64, name: &str, value: f64, provenance: &str) -> Result<(), RunError> {
        debug_assert!(is_registered(name), "unregistered metric {name}");
        if !value.is_finite() {
            return Err(RunError::guard(provenance, format!("metric {name} is not finite at t = {t}")));
        }
        self.records.push((t, name.into(), MetricValue::Scalar(value), provenance.into()));
        Ok(())
    }

    pub fn metric_array(&mut self, t: f64, name: &str, file: &str, array: &FmfArray, provenance: &str) -> Result<(), RunError> {
        debug_assert!(is_registered(name), "unregistered metric {name}");
        self.save_array(file, array)?;
        self.records.push((t, name.into(), MetricValue::Array { array: file.into() }, provenance.into()));
        Ok(())
    }

    pub fn save_array(&mut self, file: &str, array: &FmfArray) -> Result<(), RunError> {
        array.save(&self.dir.join(file)).map_err(|e| RunError::Io(format!("{file}: {e}")))?;
        self.register(file);
        Ok(())
    }

    pub fn csv(&mut self, file: &str) -> Result<csv::Writer<File>, RunError> {
        self.register(file);
        Ok(csv::Writer::from_path(self.dir.join(file))?)
    }

    fn register(&mut self, file: &str) {
        if !self.outputs.iter().any(|f| f == file) {
            self.outputs.push(file.into());
        }
    }

    /// Writes `metrics.jsonl` ordered by time and the manifest.
    pub fn finish(mut self) -> Result<PathBuf, RunError> {
        self.records.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut w = BufWriter::new(File::create(self.dir.join("metrics.jsonl"))?);
        for (t, name, value, provenance) in self.records.drain(..) {
            let rec = MetricsRecord { run_id: self.run_id.clone(), t, name, value, provenance };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        let mut outputs = self.outputs.clone();
        outputs.push("metrics.jsonl".into());
        outputs.sort();
        let manifest = Manifest {
            run_id: self.run_id.clone(),
            subcommand: self.subcommand.clone(),
            seed: self.seed,
            fermimf_version: env!("CARGO_PKG_VERSION").into(),
            fmf_version: FMF_VERSION,
            config: self.config.clone(),
            outputs,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        std::fs::write(self.dir.join("manifest.json"), text)?;
        Ok(self.dir)
    }
}
