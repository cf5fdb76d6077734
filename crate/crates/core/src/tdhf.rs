//! Time-dependent Hartree-Fock propagation of orbital sets.
//!
//! Orbitals evolve under `i eps d/dt f_j = h f_j` with
//! `h = -eps^2 Laplacian + V_ext + V * (rho / N) - X`, where
//! `X g = N^-1 sum_k f_k V * (conj(f_k) g)`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::{kinetic_in_place, kinetic_propagate, Convolver, ExternalPotential, Field, Geometry, Grid, Potential};
use crate::linalg::{dot, expm_hermitian, KrylovOptions, ZERO};
use crate::slater::OrbitalSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Strang,
    Midpoint,
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strang" => Ok(Scheme::Strang),
            "midpoint" => Ok(Scheme::Midpoint),
            other => Err(Error::InvalidArgument(format!("unknown scheme '{other}' (expected strang or midpoint)"))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StepOptions {
    pub scheme: Scheme,
    /// Re-orthonormalize every `k` steps; `None` disables it.
    pub reortho_every: Option<usize>,
    pub fixed_point_tol: f64,
    pub max_iterations: usize,
    pub krylov: KrylovOptions,
}

impl Default for StepOptions {
    fn default() -> Self {
        Self {
            scheme: Scheme::Midpoint,
            reortho_every: Some(50),
            fixed_point_tol: 1e-10,
            max_iterations: 8,
            krylov: KrylovOptions::default(),
        }
    }
}

/// Interaction, external potential and exchange switch of an HF run.
#[derive(Debug, Clone)]
pub struct HfModel {
    grid: Grid,
    convolver: Convolver,
    external: ExternalPotential,
    external_values: Vec<f64>,
    exchange: bool,
}

impl HfModel {
    pub fn new(grid: &Grid, potential: &Potential, external: ExternalPotential, exchange: bool) -> Result<Self> {
        if grid.geometry() == Geometry::Box {
            return Err(Error::Unsupported(
                "Hartree-Fock propagation uses periodic kinetic energy; use a torus grid".into(),
            ));
        }
        Ok(Self {
            grid: *grid,
            convolver: Convolver::new(grid, potential)?,
            external,
            external_values: external.sample(grid),
            exchange,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn potential(&self) -> &Potential {
        self.convolver.potential()
    }

    pub fn external(&self) -> &ExternalPotential {
        &self.external
    }

    pub fn exchange_enabled(&self) -> bool {
        self.exchange
    }

    pub fn convolver(&self) -> &Convolver {
        &self.convolver
    }

    pub fn state(&self, orbitals: OrbitalSet, t: f64) -> Result<HFState> {
        self.grid.check_same(&orbitals.grid)?;
        let density = orbitals.density();
        let n = orbitals.len() as f64;
        let hartree: Vec<f64> = self.convolver.apply_real(&density).into_iter().map(|v| v / n).collect();
        Ok(HFState { orbitals, t, density, hartree })
    }

    fn mean_field<'a>(&'a self, states: &[&'a HFState]) -> MeanField<'a> {
        let w = 1.0 / states.len() as f64;
        let mut local = self.external_values.clone();
        for s in states {
            for (l, h) in local.iter_mut().zip(&s.hartree) {
                *l += w * h;
            }
        }
        let sets = if self.exchange {
            states.iter().map(|s| (&s.orbitals.orbitals[..], w / s.orbitals.len() as f64)).collect()
        } else {
            Vec::new()
        };
        MeanField { model: self, eps: states[0].orbitals.eps, local, sets }
    }

    /// `X g` for the state's exchange operator.
    pub fn apply_exchange(&self, state: &HFState, g: &Field) -> Result<Field> {
        self.grid.check_same(&g.grid)?;
        let mut out = vec![ZERO; g.values.len()];
        let w = 1.0 / state.orbitals.len() as f64;
        exchange_accumulate(&self.convolver, &state.orbitals.orbitals, w, &g.values, &mut out);
        Field::new(self.grid, out)
    }

    /// `h f_j` for every orbital.
    pub fn hf_rhs(&self, state: &HFState) -> Vec<Field> {
        self.self_action(state)
            .into_iter()
            .map(|values| Field { grid: self.grid, values })
            .collect()
    }

    /// `h[omega] f_j` for all `j`, using the pair symmetry of the exchange.
    fn self_action(&self, state: &HFState) -> Vec<Vec<Complex64>> {
        let mf = self.mean_field(&[state]);
        let orbs = &state.orbitals.orbitals;
        let mut out: Vec<Vec<Complex64>> = orbs.par_iter().map(|f| mf.apply_local(f)).collect();
        if self.exchange {
            let x = self.pair_exchange(orbs);
            for (o, xj) in out.iter_mut().zip(x) {
                for (a, b) in o.iter_mut().zip(xj) {
                    *a -= b;
                }
            }
        }
        out
    }

    /// `X f_j` for all `j` with `N(N+1)/2` convolutions.
    fn pair_exchange(&self, orbs: &[Vec<Complex64>]) -> Vec<Vec<Complex64>> {
        let n = orbs.len();
        let w = 1.0 / n as f64;
        let cells = self.grid.cells();
        let mut out = vec![vec![ZERO; cells]; n];
        for k in 0..n {
            let pots: Vec<Vec<Complex64>> = (k..n)
                .into_par_iter()
                .map(|j| {
                    let pair: Vec<Complex64> = orbs[k].iter().zip(&orbs[j]).map(|(a, b)| a.conj() * b).collect();
                    self.convolver.apply(&pair)
                })
                .collect();
            for (off, p) in pots.iter().enumerate() {
                let j = k + off;
                // V*(conj(f_k) f_j) feeds X f_j through f_k and, conjugated, X f_k through f_j.
                for c in 0..cells {
                    out[j][c] += w * orbs[k][c] * p[c];
                }
                if j != k {
                    for c in 0..cells {
                        out[k][c] += w * orbs[j][c] * p[c].conj();
                    }
                }
            }
        }
        out
    }

    pub fn energy(&self, state: &HFState) -> HFEnergyBreakdown {
        let grid = &self.grid;
        let w = grid.cell_volume();
        let kinetic = state.orbitals.kinetic_energy();
        let external: f64 = state.density.iter().zip(&self.external_values).map(|(r, v)| r * v).sum::<f64>() * w;
        let direct = 0.5 * state.density.iter().zip(&state.hartree).map(|(r, u)| r * u).sum::<f64>() * w;
        let exchange = if self.exchange && !self.convolver.is_zero() {
            let orbs = &state.orbitals.orbitals;
            let x = self.pair_exchange(orbs);
            0.5 * orbs.iter().zip(&x).map(|(f, xf)| dot(f, xf).re).sum::<f64>() * w
        } else {
            0.0
        };
        HFEnergyBreakdown { kinetic, external, direct, exchange, total: kinetic + external + direct - exchange }
    }

    /// Advances the state by `dt`.
    pub fn step(&self, state: &HFState, dt: f64, opts: &StepOptions) -> Result<HFState> {
        if !(dt >= 0.0) {
            return Err(Error::InvalidArgument(format!("time step must be nonnegative (got {dt})")));
        }
        if dt == 0.0 {
            return Ok(state.clone());
        }
        let eps = state.orbitals.eps;
        let tau = dt / eps;
        let orbitals = match opts.scheme {
            Scheme::Midpoint => self.midpoint(state, tau, opts)?,
            Scheme::Strang => self.strang(state, dt, opts)?,
        };
        let set = OrbitalSet { orbitals, ..state.orbitals.clone() };
        self.state(set, state.t + dt)
    }

    fn propagate_all(
        &self,
        mf: &MeanField,
        orbs: &[Vec<Complex64>],
        tau: f64,
        first: Option<Vec<Vec<Complex64>>>,
        kinetic: bool,
        opts: &KrylovOptions,
    ) -> Result<Vec<Vec<Complex64>>> {
        let firsts: Vec<Option<Vec<Complex64>>> = match first {
            Some(v) => v.into_iter().map(Some).collect(),
            None => vec![None; orbs.len()],
        };
        orbs.par_iter()
            .zip(firsts)
            .map(|(f, first)| {
                let mut apply = |g: &[Complex64]| if kinetic { mf.apply(g) } else { mf.apply_potential(g) };
                expm_hermitian(&mut apply, f, tau, first, opts)
            })
            .collect()
    }

    fn midpoint(&self, state: &HFState, tau: f64, opts: &StepOptions) -> Result<Vec<Vec<Complex64>>> {
        let orbs = &state.orbitals.orbitals;
        let h_n = self.self_action(state);
        let mf_n = self.mean_field(&[state]);
        let guess = self.propagate_all(&mf_n, orbs, tau, Some(h_n.clone()), true, &opts.krylov)?;
        let mut star = self.state(OrbitalSet { orbitals: guess, ..state.orbitals.clone() }, state.t)?;
        let mut residual = f64::INFINITY;
        for _ in 0..opts.max_iterations.max(1) {
            let mf_star = self.mean_field(&[&star]);
            let first: Vec<Vec<Complex64>> = orbs
                .par_iter()
                .zip(&h_n)
                .map(|(f, hf)| {
                    let hs = mf_star.apply(f);
                    hf.iter().zip(hs).map(|(a, b)| 0.5 * (a + b)).collect()
                })
                .collect();
            let avg = self.mean_field(&[state, &star]);
            let next = self.propagate_all(&avg, orbs, tau, Some(first), true, &opts.krylov)?;
            residual = projection_distance(&self.grid, &star.orbitals.orbitals, &next) / (orbs.len() as f64).sqrt();
            star = self.state(OrbitalSet { orbitals: next, ..state.orbitals.clone() }, state.t)?;
            if residual <= opts.fixed_point_tol {
                return Ok(star.orbitals.orbitals);
            }
        }
        Err(Error::FixedPoint { residual, iterations: opts.max_iterations })
    }

    fn strang(&self, state: &HFState, dt: f64, opts: &StepOptions) -> Result<Vec<Vec<Complex64>>> {
        let eps = state.orbitals.eps;
        let kinetic = |orbs: &[Vec<Complex64>], t: f64| -> Vec<Vec<Complex64>> {
            orbs.par_iter()
                .map(|f| {
                    let mut g = f.clone();
                    kinetic_propagate(&self.grid, &mut g, eps, t);
                    g
                })
                .collect()
        };
        let mf_n = self.mean_field(&[state]);
        let q = kinetic(&state.orbitals.orbitals, 0.25 * dt);
        let q = self.propagate_all(&mf_n, &q, 0.5 * dt / eps, None, false, &opts.krylov)?;
        let q = kinetic(&q, 0.25 * dt);
        let half = self.state(OrbitalSet { orbitals: q, ..state.orbitals.clone() }, state.t + 0.5 * dt)?;
        let mf_half = self.mean_field(&[&half]);
        let f = kinetic(&state.orbitals.orbitals, 0.5 * dt);
        let f = self.propagate_all(&mf_half, &f, dt / eps, None, false, &opts.krylov)?;
        Ok(kinetic(&f, 0.5 * dt))
    }
}

/// Orbital set at time `t` with cached density and Hartree potential.
#[derive(Debug, Clone)]
pub struct HFState {
    pub orbitals: OrbitalSet,
    pub t: f64,
    /// `rho_raw = sum_j |f_j|^2`.
    pub density: Vec<f64>,
    /// `V * rho_raw / N`.
    pub hartree: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HFEnergyBreakdown {
    pub kinetic: f64,
    pub external: f64,
    pub direct: f64,
    pub exchange: f64,
    pub total: f64,
}

struct MeanField<'a> {
    model: &'a HfModel,
    eps: f64,
    local: Vec<f64>,
    sets: Vec<(&'a [Vec<Complex64>], f64)>,
}

impl MeanField<'_> {
    fn apply_local(&self, g: &[Complex64]) -> Vec<Complex64> {
        let mut out = g.to_vec();
        kinetic_in_place(&self.model.grid, &mut out, self.eps);
        for ((o, v), u) in out.iter_mut().zip(g).zip(&self.local) {
            *o += v * u;
        }
        out
    }

    fn apply(&self, g: &[Complex64]) -> Vec<Complex64> {
        let mut out = self.apply_local(g);
        self.subtract_exchange(g, &mut out);
        out
    }

    fn apply_potential(&self, g: &[Complex64]) -> Vec<Complex64> {
        let mut out: Vec<Complex64> = g.iter().zip(&self.local).map(|(v, u)| v * u).collect();
        self.subtract_exchange(g, &mut out);
        out
    }

    fn subtract_exchange(&self, g: &[Complex64], out: &mut [Complex64]) {
        if self.model.convolver.is_zero() {
            return;
        }
        for (orbs, w) in &self.sets {
            let mut x = vec![ZERO; g.len()];
            exchange_accumulate(&self.model.convolver, orbs, *w, g, &mut x);
            for (o, v) in out.iter_mut().zip(x) {
                *o -= v;
            }
        }
    }
}

fn exchange_accumulate(conv: &Convolver, orbs: &[Vec<Complex64>], w: f64, g: &[Complex64], out: &mut [Complex64]) {
    if conv.is_zero() {
        return;
    }
    for f in orbs {
        let pair: Vec<Complex64> = f.iter().zip(g).map(|(a, b)| a.conj() * b).collect();
        let p = conv.apply(&pair);
        for ((o, fk), pv) in out.iter_mut().zip(f).zip(p) {
            *o += w * fk * pv;
        }
    }
}

/// `||omega_a - omega_b||_HS` for two orthonormal orbital sets of equal size,
/// computed from the components of `b` outside `span(a)`.
pub fn projection_distance(grid: &Grid, a: &[Vec<Complex64>], b: &[Vec<Complex64>]) -> f64 {
    let w = grid.cell_volume();
    let total: f64 = b
        .par_iter()
        .map(|bj| {
            let mut r = bj.clone();
            for _ in 0..2 {
                for ai in a {
                    let c = dot(ai, &r) * w;
                    for (x, y) in r.iter_mut().zip(ai) {
                        *x -= c * y;
                    }
                }
            }
            r.iter().map(|x| x.norm_sqr()).sum::<f64>() * w
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    // ||P_a - P_b||^2 = ||(1-P_a)P_b||^2 + ||(1-P_b)P_a||^2, both equal for equal rank.
    (2.0 * total).sqrt()
}

/// `||omega_a - omega_b||_HS` from Gram matrices; valid for any sizes.
pub fn hs_distance(a: &OrbitalSet, b: &OrbitalSet) -> f64 {
    let w = a.grid.cell_volume();
    let gram = |x: &[Vec<Complex64>], y: &[Vec<Complex64>]| {
        DMatrix::from_fn(x.len(), y.len(), |i, j| dot(&x[i], &y[j]) * w)
    };
    let s = |m: &DMatrix<Complex64>| m.iter().map(|v| v.norm_sqr()).sum::<f64>();
    let v = s(&gram(&a.orbitals, &a.orbitals)) + s(&gram(&b.orbitals, &b.orbitals))
        - 2.0 * s(&gram(&a.orbitals, &b.orbitals));
    v.max(0.0).sqrt()
}

/// One sample handed to an [`evolve`] observer.
#[derive(Debug, Clone, Copy)]
pub struct Observation {
    pub step: usize,
    pub t: f64,
    pub energy: HFEnergyBreakdown,
    pub gram_error: f64,
    pub idempotency_error: f64,
}

/// Runs `round(T / dt)` steps, calling `observer` at step 0, every `stride`
/// steps and at the final time.
pub fn evolve(
    model: &HfModel,
    state: HFState,
    t_final: f64,
    dt: f64,
    stride: usize,
    opts: &StepOptions,
    observer: &mut dyn FnMut(&HFState, &Observation) -> Result<()>,
) -> Result<HFState> {
    if !(t_final > 0.0) || !(dt > 0.0) || dt > t_final * (1.0 + 1e-12) {
        return Err(Error::InvalidArgument(format!("need 0 < dt <= T (got dt = {dt}, T = {t_final})")));
    }
    let steps = (t_final / dt).round().max(1.0) as usize;
    let dt = t_final / steps as f64;
    let stride = stride.max(1);
    let t0 = state.t;
    let observe = |s: &HFState, step: usize, observer: &mut dyn FnMut(&HFState, &Observation) -> Result<()>| {
        let rep = s.orbitals.check_projection();
        let obs = Observation {
            step,
            t: s.t,
            energy: model.energy(s),
            gram_error: rep.gram_error,
            idempotency_error: rep.idempotency_error,
        };
        observer(s, &obs)
    };
    observe(&state, 0, observer)?;
    let mut state = state;
    for step in 1..=steps {
        state = model.step(&state, dt, opts)?;
        state.t = t0 + step as f64 * dt;
        if let Some(k) = opts.reortho_every {
            if k > 0 && step % k == 0 {
                let mut set = state.orbitals.clone();
                set.reorthonormalize()?;
                state = model.state(set, state.t)?;
            }
        }
        if step % stride == 0 || step == steps {
            observe(&state, step, observer)?;
        }
    }
    Ok(state)
}
