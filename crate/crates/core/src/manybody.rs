//! Exact evolution of two or three fermions in one dimension.
//!
//! `i eps d/dt psi = (sum_j (-eps^2 d_j^2 + V_ext(x_j)) + N^-1 sum_{i<j} V(x_i - x_j)) psi`
//! on the tensor grid `n^N`, propagated by a Strang split step.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::lattice::{fft, ExternalPotential, Geometry, Grid, Potential, PotentialKind};
use crate::linalg::{frobenius, singular_values, ZERO};
use crate::slater::OrbitalSet;

/// Largest tensor size accepted, `2^22` amplitudes.
pub const MAX_AMPLITUDES: usize = 1 << 22;

pub const DEFAULT_EPS: f64 = 0.25;

/// Amplitudes `psi(x_1, .., x_N)` row-major with particle 1 slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct ManyBodyWavefunction {
    pub grid: Grid,
    pub n_particles: usize,
    pub values: Vec<Complex64>,
}

fn check_size(grid: &Grid, n_particles: usize) -> Result<usize> {
    if grid.dim() != 1 {
        return Err(Error::Unsupported("many-body evolution is implemented for d = 1".into()));
    }
    if !(2..=3).contains(&n_particles) {
        return Err(Error::InvalidArgument(format!("many-body benchmark needs N in {{2, 3}} (got {n_particles})")));
    }
    let size = (grid.n() as u128).pow(n_particles as u32);
    if size > MAX_AMPLITUDES as u128 {
        return Err(Error::InvalidArgument(format!(
            "n^N = {size} exceeds the memory guard of {MAX_AMPLITUDES} amplitudes"
        )));
    }
    Ok(size as usize)
}

impl ManyBodyWavefunction {
    pub fn new(grid: Grid, n_particles: usize, values: Vec<Complex64>) -> Result<Self> {
        let size = check_size(&grid, n_particles)?;
        if values.len() != size {
            return Err(Error::GridMismatch(format!("expected {size} amplitudes, got {}", values.len())));
        }
        Ok(Self { grid, n_particles, values })
    }

    fn weight(&self) -> f64 {
        self.grid.spacing().powi(self.n_particles as i32)
    }

    pub fn norm(&self) -> f64 {
        (self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.weight()).sqrt()
    }

    fn index(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * self.grid.n() + i)
    }

    /// `max |psi + P psi| / max |psi|` over all particle transpositions `P`.
    pub fn antisymmetry_error(&self) -> f64 {
        let n = self.grid.n();
        let np = self.n_particles;
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.norm()));
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0f64;
        let mut idx = vec![0usize; np];
        for flat in 0..self.values.len() {
            let mut rem = flat;
            for a in (0..np).rev() {
                idx[a] = rem % n;
                rem /= n;
            }
            for a in 0..np {
                for b in a + 1..np {
                    idx.swap(a, b);
                    let other = self.index(&idx);
                    idx.swap(a, b);
                    worst = worst.max((self.values[flat] + self.values[other]).norm());
                }
            }
        }
        worst / scale
    }
}

/// `det[f_i(x_j)] / sqrt(N!)` for an orthonormal orbital set with `N` in `{2, 3}`.
pub fn slater_wavefunction(set: &OrbitalSet) -> Result<ManyBodyWavefunction> {
    let np = set.len();
    let size = check_size(&set.grid, np)?;
    let rep = set.check_projection();
    if rep.gram_error > 1e-6 {
        return Err(Error::InvalidArgument(format!(
            "orbitals are not orthonormal (gram error {:.3e})",
            rep.gram_error
        )));
    }
    let n = set.grid.n();
    let f = &set.orbitals;
    let norm = 1.0 / (1..=np).product::<usize>() as f64;
    let norm = norm.sqrt();
    let values = (0..size)
        .map(|flat| {
            let mut idx = [0usize; 3];
            let mut rem = flat;
            for a in (0..np).rev() {
                idx[a] = rem % n;
                rem /= n;
            }
            let det = if np == 2 {
                f[0][idx[0]] * f[1][idx[1]] - f[0][idx[1]] * f[1][idx[0]]
            } else {
                let m = |i: usize, j: usize| f[i][idx[j]];
                m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1)) - m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0))
                    + m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0))
            };
            det * norm
        })
        .collect();
    let psi = ManyBodyWavefunction { grid: set.grid, n_particles: np, values };
    if psi.norm() < 1e-6 {
        return Err(Error::InvalidArgument("Slater determinant vanishes (repeated orbitals)".into()));
    }
    Ok(psi)
}

/// One-particle reduced density as an `h`-weighted `n x n` matrix.
#[derive(Debug, Clone)]
pub struct ReducedDensity {
    pub n_particles: usize,
    pub matrix: DMatrix<Complex64>,
}

impl ReducedDensity {
    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        crate::linalg::hermitian_eigen(&self.matrix).0
    }
}

/// `gamma(x; y) = N int psi(x, rest) conj(psi(y, rest)) d rest`.
///
/// Rejects states that are not antisymmetric to `1e-10`.
pub fn reduced_density(psi: &ManyBodyWavefunction) -> Result<ReducedDensity> {
    let err = psi.antisymmetry_error();
    if err > 1e-10 {
        return Err(Error::InvalidArgument(format!("wavefunction is not antisymmetric (error {err:.3e})")));
    }
    Ok(reduced_density_unchecked(psi))
}

fn reduced_density_unchecked(psi: &ManyBodyWavefunction) -> ReducedDensity {
    let n = psi.grid.n();
    let rest = psi.values.len() / n;
    // Row a holds psi(a, rest); column-major storage wants the transpose.
    let m = DMatrix::from_fn(n, rest, |a, r| psi.values[a * rest + r]);
    let w = psi.weight() * psi.n_particles as f64;
    let gamma = (&m * m.adjoint()) * Complex64::new(w, 0.0);
    ReducedDensity { n_particles: psi.n_particles, matrix: gamma }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoremDistances {
    pub hs: f64,
    pub trace: f64,
    pub hs_normalized: f64,
    pub trace_normalized: f64,
}

/// Hilbert-Schmidt and trace distances between `gamma` and `omega`.
pub fn theorem_distances(gamma: &DMatrix<Complex64>, omega: &DMatrix<Complex64>, n_particles: usize) -> Result<TheoremDistances> {
    if gamma.shape() != omega.shape() {
        return Err(Error::GridMismatch("density matrices have different shapes".into()));
    }
    let diff = gamma - omega;
    let hs = frobenius(&diff);
    let trace: f64 = singular_values(&diff).iter().sum();
    let n = n_particles as f64;
    Ok(TheoremDistances { hs, trace, hs_normalized: hs / n.sqrt(), trace_normalized: trace / n })
}

/// Hamiltonian data for the exact evolution.
#[derive(Debug, Clone)]
pub struct ManyBodyModel {
    grid: Grid,
    n_particles: usize,
    eps: f64,
    /// Diagonal part `sum V_ext(x_j) + N^-1 sum_{i<j} V(x_i - x_j)`.
    diagonal: Vec<f64>,
    /// `eps sum k_j^2` per Fourier cell, i.e. kinetic energy over `eps`.
    kinetic_rate: Vec<f64>,
}

impl ManyBodyModel {
    pub fn new(grid: &Grid, n_particles: usize, eps: f64, potential: &Potential, external: &ExternalPotential) -> Result<Self> {
        let size = check_size(grid, n_particles)?;
        if grid.geometry() != Geometry::Torus {
            return Err(Error::Unsupported("many-body evolution needs a torus grid".into()));
        }
        if !(eps > 0.0) {
            return Err(Error::InvalidArgument("epsilon must be positive".into()));
        }
        if matches!(potential.kind, PotentialKind::Coulomb3d) {
            return Err(Error::Unsupported("coulomb3d is singular in d = 1; use soft-coulomb".into()));
        }
        let n = grid.n();
        let xs = grid.coordinates();
        let inv_n = 1.0 / n_particles as f64;
        let mut diagonal = Vec::with_capacity(size);
        let mut kinetic_rate = Vec::with_capacity(size);
        let mut idx = [0usize; 3];
        for flat in 0..size {
            let mut rem = flat;
            for a in (0..n_particles).rev() {
                idx[a] = rem % n;
                rem /= n;
            }
            let mut v = 0.0;
            let mut k2 = 0.0;
            for a in 0..n_particles {
                v += external.axis_value(xs[idx[a]]);
                let k = grid.wavenumber(idx[a]);
                k2 += k * k;
                for b in a + 1..n_particles {
                    v += inv_n * potential.pair_value(grid, idx[a], idx[b]);
                }
            }
            diagonal.push(v);
            kinetic_rate.push(eps * k2);
        }
        Ok(Self { grid: *grid, n_particles, eps, diagonal, kinetic_rate })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    fn check(&self, psi: &ManyBodyWavefunction) -> Result<()> {
        self.grid.check_same(&psi.grid)?;
        if psi.n_particles != self.n_particles {
            return Err(Error::InvalidArgument("particle number mismatch".into()));
        }
        Ok(())
    }

    fn dims(&self) -> Vec<usize> {
        vec![self.grid.n(); self.n_particles]
    }

    /// `H psi`.
    pub fn apply(&self, values: &[Complex64]) -> Vec<Complex64> {
        let mut k = values.to_vec();
        let dims = self.dims();
        fft::fft_nd(&mut k, &dims);
        for (v, r) in k.iter_mut().zip(&self.kinetic_rate) {
            *v *= r * self.eps;
        }
        fft::ifft_nd(&mut k, &dims);
        for ((o, v), d) in k.iter_mut().zip(values).zip(&self.diagonal) {
            *o += v * d;
        }
        k
    }

    pub fn energy(&self, psi: &ManyBodyWavefunction) -> f64 {
        let hp = self.apply(&psi.values);
        crate::linalg::dot(&psi.values, &hp).re * psi.weight()
    }

    /// Strang step `D(dt/2) K(dt) D(dt/2)`.
    pub fn step(&self, psi: &mut ManyBodyWavefunction, dt: f64) {
        let half = 0.5 * dt / self.eps;
        for (v, d) in psi.values.iter_mut().zip(&self.diagonal) {
            *v *= Complex64::from_polar(1.0, -half * d);
        }
        let dims = self.dims();
        fft::fft_nd(&mut psi.values, &dims);
        for (v, r) in psi.values.iter_mut().zip(&self.kinetic_rate) {
            *v *= Complex64::from_polar(1.0, -dt * r);
        }
        fft::ifft_nd(&mut psi.values, &dims);
        for (v, d) in psi.values.iter_mut().zip(&self.diagonal) {
            *v *= Complex64::from_polar(1.0, -half * d);
        }
    }

    /// Evolves to `t_final`, calling `observer` at step 0, every `stride`
    /// steps and at the end. Fails if the norm drifts by more than `1e-8`.
    pub fn evolve(
        &self,
        psi: ManyBodyWavefunction,
        t_final: f64,
        dt: f64,
        stride: usize,
        observer: &mut dyn FnMut(f64, &ManyBodyWavefunction) -> Result<()>,
    ) -> Result<ManyBodyWavefunction> {
        self.check(&psi)?;
        if !(t_final > 0.0) || !(dt > 0.0) || dt > t_final * (1.0 + 1e-12) {
            return Err(Error::InvalidArgument(format!("need 0 < dt <= T (got dt = {dt}, T = {t_final})")));
        }
        let steps = (t_final / dt).round().max(1.0) as usize;
        let dt = t_final / steps as f64;
        let stride = stride.max(1);
        let n0 = psi.norm();
        let mut psi = psi;
        observer(0.0, &psi)?;
        for step in 1..=steps {
            self.step(&mut psi, dt);
            if step % stride == 0 || step == steps {
                let drift = (psi.norm() - n0).abs();
                if drift > 1e-8 * n0 {
                    return Err(Error::Guard(format!("norm drift {drift:.3e} at step {step}")));
                }
                observer(step as f64 * dt, &psi)?;
            }
        }
        Ok(psi)
    }

    /// Dense real-symmetric Hamiltonian on the full tensor space (oracle use).
    pub fn dense_hamiltonian(&self) -> Result<DMatrix<f64>> {
        let size = self.diagonal.len();
        if size > 4096 {
            return Err(Error::InvalidArgument(format!("dense Hamiltonian of size {size} is too large")));
        }
        let n = self.grid.n();
        let t1 = crate::slater::hamiltonian_1d(&self.grid, self.eps, &vec![0.0; n]);
        let np = self.n_particles;
        let mut h = DMatrix::<f64>::zeros(size, size);
        let stride = |a: usize| n.pow((np - 1 - a) as u32);
        for row in 0..size {
            h[(row, row)] += self.diagonal[row];
            for a in 0..np {
                let s = stride(a);
                let ia = (row / s) % n;
                let base = row - ia * s;
                for ja in 0..n {
                    h[(row, base + ja * s)] += t1[(ia, ja)];
                }
            }
        }
        Ok(h)
    }
}

/// Antisymmetrizes an arbitrary tensor (useful for random test states).
pub fn antisymmetrize(grid: &Grid, n_particles: usize, values: &[Complex64]) -> Result<ManyBodyWavefunction> {
    let size = check_size(grid, n_particles)?;
    if values.len() != size {
        return Err(Error::GridMismatch("tensor size mismatch".into()));
    }
    let n = grid.n();
    let perms: Vec<(Vec<usize>, f64)> = if n_particles == 2 {
        vec![(vec![0, 1], 1.0), (vec![1, 0], -1.0)]
    } else {
        vec![
            (vec![0, 1, 2], 1.0),
            (vec![1, 2, 0], 1.0),
            (vec![2, 0, 1], 1.0),
            (vec![1, 0, 2], -1.0),
            (vec![0, 2, 1], -1.0),
            (vec![2, 1, 0], -1.0),
        ]
    };
    let mut out = vec![ZERO; size];
    let mut idx = vec![0usize; n_particles];
    for (flat, o) in out.iter_mut().enumerate() {
        let mut rem = flat;
        for a in (0..n_particles).rev() {
            idx[a] = rem % n;
            rem /= n;
        }
        for (p, sign) in &perms {
            let src = p.iter().fold(0, |acc, &a| acc * n + idx[a]);
            *o += values[src] * *sign;
        }
    }
    let mut psi = ManyBodyWavefunction { grid: *grid, n_particles, values: out };
    let nrm = psi.norm();
    if nrm == 0.0 {
        return Err(Error::InvalidArgument("antisymmetric part vanishes".into()));
    }
    for v in &mut psi.values {
        *v /= nrm;
    }
    Ok(psi)
}
