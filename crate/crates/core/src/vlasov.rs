//! Semi-Lagrangian Vlasov solver on the Wigner phase-space grid.
//!
//! With kinetic energy `-eps^2 Laplacian` the classical Hamiltonian is
//! `H = v^2 + U(x)`, so phase-space densities obey
//! `dW/dt + 2 v dW/dx - U'(x) dW/dv = 0` with `U = V * rho / N + V_ext`.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::{apply_multiplier, Convolver, ExternalPotential, Grid, Potential};
use crate::wigner::WignerField;

#[derive(Debug, Clone)]
pub struct VlasovSolver {
    grid: Grid,
    convolver: Convolver,
    external: ExternalPotential,
    /// Mean-field normalization `N`.
    n_particles: f64,
    /// Allowed CFL numbers for both advections.
    pub max_cfl: f64,
}

#[derive(Debug, Clone)]
pub struct VlasovState {
    pub field: WignerField,
    pub t: f64,
}

/// Cubic Lagrange weights for nodes `j-1, j, j+1, j+2` at `j + a`.
fn cubic_weights(a: f64) -> [f64; 4] {
    [
        -a * (a - 1.0) * (a - 2.0) / 6.0,
        (a + 1.0) * (a - 1.0) * (a - 2.0) / 2.0,
        -(a + 1.0) * a * (a - 2.0) / 2.0,
        (a + 1.0) * a * (a - 1.0) / 6.0,
    ]
}

/// `out[i] = f(i - shift)` in cell units; periodic or zero outside.
fn shift_line(f: &[f64], shift: f64, periodic: bool, out: &mut [f64]) {
    let n = f.len() as i64;
    let s = -shift;
    let base = s.floor();
    let a = s - base;
    let w = cubic_weights(a);
    let b = base as i64;
    for (i, o) in out.iter_mut().enumerate() {
        let j = i as i64 + b;
        let mut acc = 0.0;
        for (k, wk) in w.iter().enumerate() {
            let idx = j - 1 + k as i64;
            let v = if periodic {
                f[idx.rem_euclid(n) as usize]
            } else if idx >= 0 && idx < n {
                f[idx as usize]
            } else {
                0.0
            };
            acc += wk * v;
        }
        *o = acc;
    }
}

impl VlasovSolver {
    pub fn new(grid: &Grid, potential: &Potential, external: ExternalPotential, n_particles: f64) -> Result<Self> {
        if grid.dim() != 1 {
            return Err(Error::Unsupported("the Vlasov solver is implemented for d = 1".into()));
        }
        if !(n_particles > 0.0) {
            return Err(Error::InvalidArgument("mean-field normalization must be positive".into()));
        }
        Ok(Self { grid: *grid, convolver: Convolver::new(grid, potential)?, external, n_particles, max_cfl: 1.0 })
    }

    /// `rho(x) = (2 pi)^-1 sum_v W dv`.
    pub fn density(&self, w: &WignerField) -> Vec<f64> {
        w.position_marginal()
    }

    /// `F = -U'(x)`.
    pub fn force(&self, w: &WignerField) -> Vec<f64> {
        let rho = self.density(w);
        let mut u: Vec<Complex64> = self
            .convolver
            .apply_real(&rho)
            .into_iter()
            .map(|v| Complex64::new(v / self.n_particles, 0.0))
            .collect();
        let g = self.grid;
        apply_multiplier(&g, &mut u, |i| Complex64::new(0.0, g.derivative_wavenumber(i)));
        self.grid
            .coordinates()
            .iter()
            .zip(&u)
            .map(|(&x, du)| -(du.re + self.external.axis_derivative(x)))
            .collect()
    }

    fn check_field(&self, w: &WignerField) -> Result<()> {
        self.grid.check_same(&w.grid)?;
        if w.nv() < 4 {
            return Err(Error::InvalidArgument("velocity grid needs at least 4 points".into()));
        }
        Ok(())
    }

    fn advect_x(&self, w: &mut WignerField, tau: f64) {
        let nx = self.grid.n();
        let nv = w.nv();
        let h = self.grid.spacing();
        let cols: Vec<Vec<f64>> = (0..nv)
            .into_par_iter()
            .map(|l| {
                let col: Vec<f64> = (0..nx).map(|i| w.values[i * nv + l]).collect();
                let mut out = vec![0.0; nx];
                shift_line(&col, 2.0 * w.velocities[l] * tau / h, true, &mut out);
                out
            })
            .collect();
        for (l, col) in cols.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                w.values[i * nv + l] = *v;
            }
        }
    }

    fn advect_v(&self, w: &mut WignerField, force: &[f64], tau: f64) {
        let nv = w.nv();
        let dv = w.dv();
        w.values.par_chunks_mut(nv).zip(force.par_iter()).for_each(|(row, f)| {
            let src = row.to_vec();
            shift_line(&src, f * tau / dv, false, row);
        });
    }

    /// One Strang step: half x-advection, full v-advection, half x-advection.
    pub fn step(&self, state: &VlasovState, dt: f64) -> Result<VlasovState> {
        self.check_field(&state.field)?;
        let w = &state.field;
        let vmax = w.velocities.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let h = self.grid.spacing();
        if 2.0 * vmax * dt > self.max_cfl * h * (1.0 + 1e-12) {
            return Err(Error::Guard(format!(
                "CFL violated in x: 2 v_max dt = {:.4e} exceeds {:.4e}",
                2.0 * vmax * dt,
                self.max_cfl * h
            )));
        }
        let mut next = w.clone();
        self.advect_x(&mut next, 0.5 * dt);
        let force = self.force(&next);
        let fmax = force.iter().fold(0.0f64, |m, f| m.max(f.abs()));
        if fmax * dt > self.max_cfl * next.dv() * (1.0 + 1e-12) {
            return Err(Error::Guard(format!(
                "CFL violated in v: F_max dt = {:.4e} exceeds {:.4e}",
                fmax * dt,
                self.max_cfl * next.dv()
            )));
        }
        self.advect_v(&mut next, &force, dt);
        self.advect_x(&mut next, 0.5 * dt);
        Ok(VlasovState { field: next, t: state.t + dt })
    }

    /// Evolves to `t_final`, returning the states at step 0, every `stride`
    /// steps and at the end.
    pub fn evolve(&self, initial: &WignerField, t_final: f64, dt: f64, stride: usize) -> Result<Vec<VlasovState>> {
        if !(t_final > 0.0) || !(dt > 0.0) || dt > t_final * (1.0 + 1e-12) {
            return Err(Error::InvalidArgument(format!("need 0 < dt <= T (got dt = {dt}, T = {t_final})")));
        }
        let steps = (t_final / dt).round().max(1.0) as usize;
        let dt = t_final / steps as f64;
        let stride = stride.max(1);
        let mut state = VlasovState { field: initial.clone(), t: 0.0 };
        let mut out = vec![state.clone()];
        for step in 1..=steps {
            state = self.step(&state, dt)?;
            state.t = step as f64 * dt;
            if step % stride == 0 || step == steps {
                out.push(state.clone());
            }
        }
        Ok(out)
    }
}

/// Phase-space distance at one time, normalized by the initial HF norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseDistance {
    pub t: f64,
    pub l1: f64,
    pub l2: f64,
}

/// `||W_hf(t) - W_vl(t)||_p / ||W_hf(0)||_p` for `p = 1, 2`.
pub fn compare_hf_vlasov(hf: &[WignerField], vlasov: &[WignerField], times: &[f64]) -> Result<Vec<PhaseDistance>> {
    if hf.len() != vlasov.len() || hf.len() != times.len() || hf.is_empty() {
        return Err(Error::InvalidArgument("trajectories and times must have equal nonzero length".into()));
    }
    let n1 = hf[0].norm(1.0);
    let n2 = hf[0].norm(2.0);
    hf.iter()
        .zip(vlasov)
        .zip(times)
        .map(|((a, b), &t)| {
            if !a.same_phase_grid(b) {
                return Err(Error::GridMismatch("HF and Vlasov phase grids differ".into()));
            }
            let w = a.grid.spacing() * a.dv();
            let d1: f64 = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).sum::<f64>() * w;
            let d2: f64 = (a.values.iter().zip(&b.values).map(|(x, y)| (x - y).powi(2)).sum::<f64>() * w).sqrt();
            Ok(PhaseDistance { t, l1: d1 / n1, l2: d2 / n2 })
        })
        .collect()
}
