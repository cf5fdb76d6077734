//! Slater-determinant initial data: rank-N projections given by orbitals.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::{apply_multiplier, ExternalPotential, Field, Geometry, Grid};
use crate::linalg::ZERO;

/// Orthonormal orbitals `f_1..f_N` representing `omega = sum |f_j><f_j|`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrbitalSet {
    pub grid: Grid,
    pub eps: f64,
    pub orbitals: Vec<Vec<Complex64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionReport {
    pub gram_error: f64,
    pub trace: f64,
    pub idempotency_error: f64,
}

/// Result of [`fermi_sea`]: the orbitals plus the occupied integer wave vectors.
#[derive(Debug, Clone)]
pub struct FermiSea {
    pub orbitals: OrbitalSet,
    pub wave_vectors: Vec<[i64; 3]>,
    pub closed_shell: bool,
}

impl OrbitalSet {
    pub fn new(grid: Grid, eps: f64, orbitals: Vec<Vec<Complex64>>) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::InvalidArgument(format!("epsilon must be positive (got {eps})")));
        }
        if orbitals.is_empty() {
            return Err(Error::InvalidArgument("orbital set is empty".into()));
        }
        if let Some(bad) = orbitals.iter().find(|o| o.len() != grid.cells()) {
            return Err(Error::GridMismatch(format!("orbital has {} values, grid has {}", bad.len(), grid.cells())));
        }
        Ok(Self { grid, eps, orbitals })
    }

    pub fn from_fields(eps: f64, fields: &[Field]) -> Result<Self> {
        let grid = fields.first().ok_or_else(|| Error::InvalidArgument("no orbitals".into()))?.grid;
        for f in fields {
            grid.check_same(&f.grid)?;
        }
        Self::new(grid, eps, fields.iter().map(|f| f.values.clone()).collect())
    }

    pub fn len(&self) -> usize {
        self.orbitals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.orbitals.is_empty()
    }

    pub fn field(&self, j: usize) -> Field {
        Field { grid: self.grid, values: self.orbitals[j].clone() }
    }

    /// `rho_raw(x) = sum_j |f_j(x)|^2`, integrating to `N`.
    pub fn density(&self) -> Vec<f64> {
        let mut rho = vec![0.0; self.grid.cells()];
        for f in &self.orbitals {
            for (r, v) in rho.iter_mut().zip(f) {
                *r += v.norm_sqr();
            }
        }
        rho
    }

    pub fn gram(&self) -> DMatrix<Complex64> {
        let n = self.len();
        let w = self.grid.cell_volume();
        let mut g = DMatrix::from_element(n, n, ZERO);
        for i in 0..n {
            for j in i..n {
                let v = crate::linalg::dot(&self.orbitals[i], &self.orbitals[j]) * w;
                g[(i, j)] = v;
                g[(j, i)] = v.conj();
            }
        }
        g
    }

    pub fn check_projection(&self) -> ProjectionReport {
        let g = self.gram();
        let n = g.nrows();
        let id = DMatrix::<Complex64>::identity(n, n);
        let gram_error = crate::linalg::frobenius(&(&g - &id));
        let idempotency_error = crate::linalg::frobenius(&(&g * &g - &g));
        ProjectionReport { gram_error, trace: n as f64, idempotency_error }
    }

    /// Modified Gram-Schmidt followed by the phase convention.
    pub fn reorthonormalize(&mut self) -> Result<()> {
        let w = self.grid.cell_volume();
        for j in 0..self.orbitals.len() {
            let (done, rest) = self.orbitals.split_at_mut(j);
            let f = &mut rest[0];
            for _ in 0..2 {
                for q in done.iter() {
                    let c = crate::linalg::dot(q, f) * w;
                    for (x, y) in f.iter_mut().zip(q) {
                        *x -= c * y;
                    }
                }
            }
            let nrm = (crate::linalg::norm(f).powi(2) * w).sqrt();
            if nrm < 1e-10 {
                return Err(Error::Guard(format!("orbital {j} is linearly dependent on the previous ones")));
            }
            for x in f.iter_mut() {
                *x /= nrm;
            }
        }
        for f in &mut self.orbitals {
            apply_phase_convention(f);
        }
        Ok(())
    }

    /// `sum_j ||eps grad f_j||^2`, evaluated spectrally.
    pub fn kinetic_energy(&self) -> f64 {
        let grid = self.grid;
        let e2 = self.eps * self.eps;
        let shape = grid.shape();
        let scale = grid.cell_volume() / grid.cells() as f64;
        self.orbitals
            .par_iter()
            .map(|f| {
                let mut c = f.clone();
                crate::lattice::fft::fft_nd(&mut c, &shape);
                c.iter().enumerate().map(|(i, v)| e2 * grid.k_squared(i) * v.norm_sqr()).sum::<f64>() * scale
            })
            .collect::<Vec<f64>>()
            .iter()
            .sum()
    }

    /// `omega` as a dense `h^d`-weighted kernel matrix `omega(x_a; x_b) h^d`.
    pub fn dense_projection(&self) -> DMatrix<Complex64> {
        let m = self.grid.cells();
        let w = self.grid.cell_volume();
        let mut out = DMatrix::from_element(m, m, ZERO);
        for f in &self.orbitals {
            for a in 0..m {
                let fa = f[a] * w;
                for b in 0..m {
                    out[(a, b)] += fa * f[b].conj();
                }
            }
        }
        out
    }
}

/// Index of the dominant sample: the first whose magnitude is within a
/// relative 1e-9 of the maximum.
pub fn dominant_index(f: &[Complex64]) -> usize {
    let max = f.iter().map(|v| v.norm()).fold(0.0, f64::max);
    f.iter().position(|v| v.norm() >= max * (1.0 - 1e-9)).unwrap_or(0)
}

/// Rotates `f` so that its dominant sample is real and positive.
pub fn apply_phase_convention(f: &mut [Complex64]) {
    let i = dominant_index(f);
    let v = f[i];
    if v.norm() == 0.0 {
        return;
    }
    let phase = v.conj() / v.norm();
    for x in f.iter_mut() {
        *x *= phase;
    }
}

fn tie_key(m: i64) -> u64 {
    // 0, 1, -1, 2, -2, ...
    if m > 0 {
        2 * m as u64 - 1
    } else {
        2 * (-m) as u64
    }
}

/// The `N` plane waves with smallest `|k|`, ties broken lexicographically on
/// integer wave vectors with per-component order `0, 1, -1, 2, -2, ...`.
pub fn fermi_sea(grid: &Grid, n_particles: usize, eps: f64) -> Result<FermiSea> {
    if grid.geometry() != Geometry::Torus {
        return Err(Error::Unsupported("fermi_sea needs a torus grid".into()));
    }
    if n_particles == 0 || n_particles > grid.cells() {
        return Err(Error::InvalidArgument(format!(
            "N = {n_particles} must lie in 1..={} for this grid",
            grid.cells()
        )));
    }
    let dim = grid.dim();
    let n = grid.n();
    let mut modes: Vec<[i64; 3]> = (0..grid.cells())
        .map(|flat| {
            let idx = grid.unravel(flat);
            let mut m = [0i64; 3];
            for a in 0..dim {
                m[a] = grid.mode(idx[a]);
            }
            m
        })
        .collect();
    let norm2 = |m: &[i64; 3]| m.iter().map(|x| x * x).sum::<i64>();
    modes.sort_by_key(|m| (norm2(m), tie_key(m[0]), tie_key(m[1]), tie_key(m[2])));
    let closed_shell = n_particles == modes.len() || norm2(&modes[n_particles - 1]) < norm2(&modes[n_particles]);
    if !closed_shell {
        log::warn!("fermi sea with N = {n_particles} fills its outer shell only partially");
    }
    let chosen: Vec<[i64; 3]> = modes[..n_particles].to_vec();
    let amp = grid.volume().powf(-0.5);
    let dk = 2.0 * std::f64::consts::PI / grid.length();
    let orbitals = chosen
        .iter()
        .map(|m| {
            (0..grid.cells())
                .map(|flat| {
                    let idx = grid.unravel(flat);
                    // Phase from integer arithmetic keeps the samples exact.
                    let mut phase = 0.0;
                    for a in 0..dim {
                        let j = idx[a] as i64;
                        let turns = (m[a] * j).rem_euclid(n as i64) as f64 / n as f64;
                        phase += 2.0 * std::f64::consts::PI * turns + m[a] as f64 * dk * (-0.5 * grid.length());
                    }
                    Complex64::from_polar(amp, phase)
                })
                .collect()
        })
        .collect();
    Ok(FermiSea { orbitals: OrbitalSet::new(*grid, eps, orbitals)?, wave_vectors: chosen, closed_shell })
}

/// Dense 1D Hamiltonian `-eps^2 d^2/dx^2 + V` with the spectral kinetic matrix.
pub(crate) fn hamiltonian_1d(grid: &Grid, eps: f64, potential: &[f64]) -> DMatrix<f64> {
    let n = grid.n();
    let g1 = Grid::new(1, n, grid.length(), Geometry::Torus).expect("valid 1d grid");
    let mut col = vec![ZERO; n];
    col[0] = Complex64::new(1.0, 0.0);
    let e2 = eps * eps;
    apply_multiplier(&g1, &mut col, |i| Complex64::new(e2 * g1.k_squared(i), 0.0));
    DMatrix::from_fn(n, n, |i, j| {
        let d = (i + n - j) % n;
        col[d].re + if i == j { potential[i] } else { 0.0 }
    })
}

struct Level {
    energy: f64,
    dominant: usize,
    values: Vec<f64>,
}

/// Sorts by energy; levels within a relative 1e-9 are ordered by dominant index.
fn sort_levels<T>(levels: &mut Vec<T>, energy: impl Fn(&T) -> f64, dominant: impl Fn(&T) -> usize) {
    levels.sort_by(|a, b| energy(a).total_cmp(&energy(b)));
    let mut start = 0;
    while start < levels.len() {
        let e0 = energy(&levels[start]);
        let mut end = start + 1;
        while end < levels.len() && (energy(&levels[end]) - e0).abs() <= 1e-9 * e0.abs().max(1.0) {
            end += 1;
        }
        levels[start..end].sort_by_key(|l| dominant(l));
        start = end;
    }
}

fn eigen_1d(grid: &Grid, eps: f64, trap: &ExternalPotential) -> Result<Vec<Level>> {
    let n = grid.n();
    let v: Vec<f64> = grid.coordinates().iter().map(|&x| trap.axis_value(x)).collect();
    let h = hamiltonian_1d(grid, eps, &v);
    let scale = h.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
    let eig = h.clone().symmetric_eigen();
    let norm = grid.spacing().sqrt();
    let mut levels = Vec::with_capacity(n);
    let mut worst = 0.0f64;
    for k in 0..n {
        let vec = eig.eigenvectors.column(k).into_owned();
        let res = (&h * &vec - &vec * eig.eigenvalues[k]).norm();
        worst = worst.max(res);
        let values: Vec<f64> = vec.iter().map(|x| x / norm).collect();
        let c: Vec<Complex64> = values.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        levels.push(Level { energy: eig.eigenvalues[k], dominant: dominant_index(&c), values });
    }
    if worst > 1e-8 * scale {
        return Err(Error::Eigensolver { max_residual: worst });
    }
    sort_levels(&mut levels, |l| l.energy, |l| l.dominant);
    Ok(levels)
}

/// Lowest `N` eigenfunctions of `-eps^2 Laplacian + V_ext`.
///
/// The trap is separable, so in `d > 1` the orbitals are tensor products of
/// 1D eigenfunctions. On a box grid the spectrum is computed with periodic
/// kinetic energy and the orbitals are returned on the box grid.
pub fn trapped_ground(grid: &Grid, n_particles: usize, trap: &ExternalPotential, eps: f64) -> Result<OrbitalSet> {
    if n_particles == 0 || n_particles > grid.cells() {
        return Err(Error::InvalidArgument(format!("N = {n_particles} out of range")));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument("epsilon must be positive".into()));
    }
    if trap.quartic < 0.0 || (trap.quartic == 0.0 && trap.quadratic <= 0.0) {
        log::warn!("external potential is not confining");
    }
    let dim = grid.dim();
    let n = grid.n();
    let one_d = eigen_1d(grid, eps, trap)?;
    let keep = n.min(n_particles);
    let mut combos: Vec<([usize; 3], f64, usize)> = Vec::new();
    for flat in 0..keep.pow(dim as u32) {
        let mut idx = [0usize; 3];
        let mut rem = flat;
        for a in (0..dim).rev() {
            idx[a] = rem % keep;
            rem /= keep;
        }
        let energy: f64 = (0..dim).map(|a| one_d[idx[a]].energy).sum();
        let mut dom = [0usize; 3];
        for a in 0..dim {
            dom[a] = one_d[idx[a]].dominant;
        }
        combos.push((idx, energy, grid.ravel(dom)));
    }
    sort_levels(&mut combos, |c| c.1, |c| c.2);
    let orbitals = combos[..n_particles]
        .iter()
        .map(|(idx, _, _)| {
            let mut f: Vec<Complex64> = (0..grid.cells())
                .map(|flat| {
                    let c = grid.unravel(flat);
                    Complex64::new((0..dim).map(|a| one_d[idx[a]].values[c[a]]).product(), 0.0)
                })
                .collect();
            apply_phase_convention(&mut f);
            f
        })
        .collect();
    OrbitalSet::new(*grid, eps, orbitals)
}

/// Single Gaussian packet `(pi sigma^2)^{-1/4} exp(-(x - x0)^2 / 2 sigma^2 + i v0 x / eps)`
/// on a 1D grid.
pub fn coherent_state(grid: &Grid, eps: f64, sigma: f64, x0: f64, v0: f64) -> Result<OrbitalSet> {
    if grid.dim() != 1 {
        return Err(Error::Unsupported("coherent states are generated in d = 1".into()));
    }
    if !(eps > 0.0) || !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("need eps > 0 and sigma > 0 (got {eps}, {sigma})")));
    }
    if 8.0 * sigma > grid.length() {
        log::warn!("packet width {sigma} is not small against the box length {}", grid.length());
    }
    let c = (std::f64::consts::PI * sigma * sigma).powf(-0.25);
    let f = grid
        .coordinates()
        .iter()
        .map(|&x| Complex64::from_polar(c * (-(x - x0).powi(2) / (2.0 * sigma * sigma)).exp(), v0 * x / eps))
        .collect();
    OrbitalSet::new(*grid, eps, vec![f])
}

/// `<f, (-eps^2 Laplacian + V_ext) f>` for one orbital.
pub fn orbital_energy(set: &OrbitalSet, j: usize, trap: &ExternalPotential) -> f64 {
    let grid = set.grid.with_geometry(Geometry::Torus);
    let f = &set.orbitals[j];
    let mut t = f.clone();
    crate::lattice::kinetic_in_place(&grid, &mut t, set.eps);
    let v = trap.sample(&grid);
    let w = grid.cell_volume();
    let kin = crate::linalg::dot(f, &t).re * w;
    let pot: f64 = f.iter().zip(&v).map(|(x, p)| x.norm_sqr() * p).sum::<f64>() * w;
    kin + pot
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::make_grid;
    use std::f64::consts::PI;

    #[test]
    fn fermi_sea_1d_three() {
        let g = make_grid(1, 16, 2.0 * PI, Geometry::Torus).unwrap();
        let fs = fermi_sea(&g, 3, 1.0 / 3.0).unwrap();
        let ks: Vec<i64> = fs.wave_vectors.iter().map(|m| m[0]).collect();
        assert_eq!(ks, vec![0, 1, -1]);
        for r in fs.orbitals.density() {
            assert!((r - 3.0 / (2.0 * PI)).abs() < 1e-12);
        }
        assert!((fs.orbitals.kinetic_energy() - 2.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn fermi_sea_tie_break() {
        let g = make_grid(1, 16, 2.0 * PI, Geometry::Torus).unwrap();
        let fs = fermi_sea(&g, 4, 1.0).unwrap();
        let ks: Vec<i64> = fs.wave_vectors.iter().map(|m| m[0]).collect();
        assert_eq!(ks, vec![0, 1, -1, 2]);
        assert!(!fs.closed_shell);
        assert!(fermi_sea(&g, 17, 1.0).is_err());
    }

    #[test]
    fn duplicated_orbital_gram_error() {
        let g = make_grid(1, 16, 2.0 * PI, Geometry::Torus).unwrap();
        let fs = fermi_sea(&g, 2, 1.0).unwrap();
        let mut set = fs.orbitals.clone();
        set.orbitals[1] = set.orbitals[0].clone();
        let rep = set.check_projection();
        assert!((rep.gram_error - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn constant_orbital_has_no_kinetic_energy() {
        let g = make_grid(2, 8, 2.0, Geometry::Torus).unwrap();
        let c = Complex64::new(0.5, 0.0);
        let set = OrbitalSet::new(g, 0.3, vec![vec![c; 64]]).unwrap();
        assert!(set.kinetic_energy().abs() < 1e-14);
    }
}
