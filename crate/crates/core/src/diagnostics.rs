//! Commutator structure of a rank-N projection: singular values of `[w, omega]`,
//! absolute-value densities, L^p scans, maximal functions and the trace-norm
//! bound for Gaussian localizations.

use std::sync::Once;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::{apply_multiplier, fft, lp_norm, Geometry, Grid};
use crate::linalg::{dot, hermitian_eigen, ZERO};
use crate::slater::OrbitalSet;

/// Multiplier or derivative whose commutator with `omega` is measured.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Weight {
    /// Coordinate `x_axis` (sawtooth on a torus).
    Position { axis: usize },
    /// `eps d/dx_axis`.
    Gradient { axis: usize },
    /// `exp(-|x - z|^2 / r^2)`.
    Gaussian { r: f64, z: [f64; 3] },
}

impl std::fmt::Display for Weight {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Weight::Position { axis } => write!(f, "x{}", axis + 1),
            Weight::Gradient { axis } => write!(f, "eps*d{}", axis + 1),
            Weight::Gaussian { r, z } => write!(f, "chi(r={r}, z=[{}, {}, {}])", z[0], z[1], z[2]),
        }
    }
}

static SAWTOOTH_WARNING: Once = Once::new();

/// Samples of a multiplication weight, or `None` for the derivative weight.
fn weight_values(grid: &Grid, weight: &Weight) -> Result<Option<Vec<f64>>> {
    match *weight {
        Weight::Position { axis } => {
            check_axis(grid, axis)?;
            if grid.geometry() == Geometry::Torus {
                SAWTOOTH_WARNING.call_once(|| {
                    log::warn!("position weight on a torus is the sawtooth coordinate, discontinuous at the seam")
                });
            }
            Ok(Some((0..grid.cells()).map(|i| grid.position(i)[axis]).collect()))
        }
        Weight::Gradient { axis } => {
            check_axis(grid, axis)?;
            Ok(None)
        }
        Weight::Gaussian { r, z } => {
            if !(r > 0.0) {
                return Err(Error::InvalidArgument(format!("Gaussian weight needs r > 0 (got {r})")));
            }
            Ok(Some((0..grid.cells()).map(|i| gaussian_weight(grid, i, r, &z)).collect()))
        }
    }
}

fn check_axis(grid: &Grid, axis: usize) -> Result<()> {
    if axis >= grid.dim() {
        return Err(Error::InvalidArgument(format!("axis {} exceeds grid dimension {}", axis + 1, grid.dim())));
    }
    Ok(())
}

/// `chi_(r,z)` at a cell: minimum-image distance on the torus, plain distance in a box.
pub fn gaussian_weight(grid: &Grid, cell: usize, r: f64, z: &[f64; 3]) -> f64 {
    let x = grid.position(cell);
    let l = grid.length();
    let mut d2 = 0.0;
    for a in 0..grid.dim() {
        let mut d = x[a] - z[a];
        if grid.geometry() == Geometry::Torus {
            d -= l * (d / l).round();
        }
        d2 += d * d;
    }
    (-d2 / (r * r)).exp()
}

fn gradient(grid: &Grid, eps: f64, axis: usize, f: &[Complex64]) -> Vec<Complex64> {
    let g = grid.with_geometry(Geometry::Torus);
    let mut out = f.to_vec();
    apply_multiplier(&g, &mut out, |i| {
        let idx = g.unravel(i);
        Complex64::new(0.0, eps * g.derivative_wavenumber(idx[axis]))
    });
    out
}

/// Singular values and singular functions of `[w, omega]`.
#[derive(Debug, Clone)]
pub struct CommutatorSpectrum {
    pub grid: Grid,
    pub weight: Weight,
    /// Descending, length `2N` (zeros beyond the numerical rank).
    pub values: Vec<f64>,
    /// Orthonormal `u_m`, one per singular value.
    pub vectors: Vec<Vec<Complex64>>,
    /// Number of Gram directions discarded as numerically dependent.
    pub dropped: usize,
}

impl CommutatorSpectrum {
    pub fn trace_norm(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn hilbert_schmidt(&self) -> f64 {
        self.values.iter().map(|s| s * s).sum::<f64>().sqrt()
    }
}

/// Low-rank spectrum of `[w, omega]` from the span of `{w f_j, f_j}`.
pub fn commutator_spectrum(set: &OrbitalSet, weight: &Weight) -> Result<CommutatorSpectrum> {
    let grid = set.grid;
    let n = set.len();
    let values = weight_values(&grid, weight)?;
    // Z = [D f, f]; [D, omega] = Z C Z* with C = [[0, I], [-s I, 0]].
    let (df, s): (Vec<Vec<Complex64>>, f64) = match (&values, weight) {
        (Some(w), _) => (
            set.orbitals.iter().map(|f| f.iter().zip(w).map(|(a, b)| a * b).collect()).collect(),
            1.0,
        ),
        (None, Weight::Gradient { axis }) => {
            (set.orbitals.par_iter().map(|f| gradient(&grid, set.eps, *axis, f)).collect(), -1.0)
        }
        _ => unreachable!("only the gradient weight lacks multiplier values"),
    };
    let z: Vec<&Vec<Complex64>> = df.iter().chain(set.orbitals.iter()).collect();
    let m = 2 * n;
    let hw = grid.cell_volume();
    let mut gram = DMatrix::from_element(m, m, ZERO);
    for i in 0..m {
        for j in i..m {
            let v = dot(z[i], z[j]) * hw;
            gram[(i, j)] = v;
            gram[(j, i)] = v.conj();
        }
    }
    let (lam, vecs) = hermitian_eigen(&gram);
    let lmax = lam.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..m).filter(|&k| lmax > 0.0 && lam[k] > 1e-13 * lmax).collect();
    let dropped = m - keep.len();
    if dropped > 0 && lmax > 0.0 {
        log::debug!("commutator span: discarded {dropped} dependent directions");
    }
    let r = keep.len();
    let mut c = DMatrix::from_element(m, m, ZERO);
    for j in 0..n {
        c[(j, n + j)] = Complex64::new(1.0, 0.0);
        c[(n + j, j)] = Complex64::new(-s, 0.0);
    }
    let v = DMatrix::from_fn(m, r, |i, k| vecs[(i, keep[k])]);
    let sq: Vec<f64> = keep.iter().map(|&k| lam[k].sqrt()).collect();
    let mut small = v.adjoint() * &c * &v;
    for a in 0..r {
        for b in 0..r {
            small[(a, b)] *= sq[a] * sq[b];
        }
    }
    // s = +1: small is anti-Hermitian, so i*small is Hermitian.
    let herm = if s > 0.0 { small * Complex64::new(0.0, 1.0) } else { small };
    let herm = (&herm + herm.adjoint()) * Complex64::new(0.5, 0.0);
    let (mu, w) = if r > 0 { hermitian_eigen(&herm) } else { (Vec::new(), DMatrix::zeros(0, 0)) };
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| mu[b].abs().total_cmp(&mu[a].abs()));
    let cells = grid.cells();
    // Basis Q = Z V Lambda^{-1/2}; u = Q w.
    let q: Vec<Vec<Complex64>> = (0..r)
        .map(|k| {
            let mut out = vec![ZERO; cells];
            for (i, zi) in z.iter().enumerate() {
                let coef = v[(i, k)] / sq[k];
                if coef != ZERO {
                    for (o, x) in out.iter_mut().zip(zi.iter()) {
                        *o += coef * x;
                    }
                }
            }
            out
        })
        .collect();
    let mut sigma = Vec::with_capacity(m);
    let mut vectors = Vec::with_capacity(m);
    for &k in &order {
        sigma.push(mu[k].abs());
        let mut u = vec![ZERO; cells];
        for (a, qa) in q.iter().enumerate() {
            let coef = w[(a, k)];
            for (o, x) in u.iter_mut().zip(qa) {
                *o += coef * x;
            }
        }
        vectors.push(u);
    }
    while sigma.len() < m {
        sigma.push(0.0);
        vectors.push(vec![ZERO; cells]);
    }
    Ok(CommutatorSpectrum { grid, weight: *weight, values: sigma, vectors, dropped })
}

/// `rho_|A|(x) = sum_m sigma_m |u_m(x)|^2`.
#[derive(Debug, Clone)]
pub struct AbsDensity {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl AbsDensity {
    pub fn l1(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn lp(&self, p: f64) -> Result<f64> {
        lp_norm(&self.grid, &self.values, p)
    }
}

pub fn abs_density(spec: &CommutatorSpectrum) -> AbsDensity {
    let mut rho = vec![0.0; spec.grid.cells()];
    for (s, u) in spec.values.iter().zip(&spec.vectors) {
        if *s == 0.0 {
            continue;
        }
        for (r, v) in rho.iter_mut().zip(u) {
            *r += s * v.norm_sqr();
        }
    }
    AbsDensity { grid: spec.grid, values: rho }
}

/// Which family of weights an assumption scan uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanWeight {
    Position,
    Gradient,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanRow {
    pub t: f64,
    /// Zero-based axis.
    pub axis: usize,
    pub p: f64,
    pub l1: f64,
    pub lp: f64,
    /// `(l1 + lp) / (N eps)`.
    pub ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanTotal {
    pub t: f64,
    /// `sum_i (||rho_i||_1 + ||rho_i||_p)`.
    pub sum: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanTable {
    pub rows: Vec<ScanRow>,
    pub totals: Vec<ScanTotal>,
    pub sup_ratio: f64,
}

pub const MIN_SCAN_EXPONENT: f64 = 5.0;

/// L^1 and L^p norms of the commutator densities along a trajectory.
///
/// `p > 5` is required unless `allow_small_p` is set.
pub fn assumption_scan(
    snapshots: &[(f64, OrbitalSet)],
    weight: ScanWeight,
    p: f64,
    allow_small_p: bool,
) -> Result<ScanTable> {
    if !(p >= 1.0) {
        return Err(Error::InvalidArgument(format!("p must be >= 1 (got {p})")));
    }
    if !(p > MIN_SCAN_EXPONENT) && !allow_small_p {
        return Err(Error::InvalidArgument(format!(
            "assumption scan needs p > {MIN_SCAN_EXPONENT} (got {p}); pass the override to allow smaller p"
        )));
    }
    let per_snapshot: Vec<Result<(Vec<ScanRow>, ScanTotal)>> = snapshots
        .par_iter()
        .map(|(t, set)| {
            let ne = set.len() as f64 * set.eps;
            let mut rows = Vec::new();
            let mut sum = 0.0;
            for axis in 0..set.grid.dim() {
                let w = match weight {
                    ScanWeight::Position => Weight::Position { axis },
                    ScanWeight::Gradient => Weight::Gradient { axis },
                };
                let dens = abs_density(&commutator_spectrum(set, &w)?);
                let l1 = dens.l1();
                let lp = dens.lp(p)?;
                sum += l1 + lp;
                rows.push(ScanRow { t: *t, axis, p, l1, lp, ratio: (l1 + lp) / ne });
            }
            Ok((rows, ScanTotal { t: *t, sum, ratio: sum / ne }))
        })
        .collect();
    let mut rows = Vec::new();
    let mut totals = Vec::new();
    for r in per_snapshot {
        let (rs, tot) = r?;
        rows.extend(rs);
        totals.push(tot);
    }
    let sup_ratio = totals.iter().map(|t| t.ratio).fold(0.0, f64::max);
    Ok(ScanTable { rows, totals, sup_ratio })
}

/// Lattice offsets within distance `r` of the origin.
fn ball_offsets(grid: &Grid, k: usize) -> Vec<[i64; 3]> {
    let dim = grid.dim();
    let k = k as i64;
    let mut out = Vec::new();
    let range: Vec<i64> = (-k..=k).collect();
    let zero = [0i64];
    let r1 = &range[..];
    let r2 = if dim >= 2 { &range[..] } else { &zero[..] };
    let r3 = if dim >= 3 { &range[..] } else { &zero[..] };
    for &a in r1 {
        for &b in r2 {
            for &c in r3 {
                if a * a + b * b + c * c <= k * k {
                    out.push([a, b, c]);
                }
            }
        }
    }
    out
}

/// Discrete Hardy-Littlewood maximal function.
///
/// For each cell, the maximum over radii `0, h, ..., L/2` and over ball
/// centers within one cell of it of the average of `rho` over the lattice
/// points of the ball. Points outside a box grid count as zero density.
pub fn maximal_function(grid: &Grid, rho: &[f64]) -> Result<Vec<f64>> {
    if rho.len() != grid.cells() {
        return Err(Error::GridMismatch("density length does not match grid".into()));
    }
    if rho.iter().any(|v| *v < 0.0) {
        return Err(Error::InvalidArgument("maximal function needs a nonnegative density".into()));
    }
    let dim = grid.dim();
    let n = grid.n();
    let periodic = grid.geometry() == Geometry::Torus;
    let size = if periodic { n } else { 2 * n };
    let shape = vec![size; dim];
    let total = size.pow(dim as u32);
    let embed = |idx: [i64; 3]| -> usize { (0..dim).fold(0, |acc, a| acc * size + idx[a].rem_euclid(size as i64) as usize) };
    let mut rho_hat = vec![ZERO; total];
    for (i, v) in rho.iter().enumerate() {
        let idx = grid.unravel(i);
        rho_hat[embed([idx[0] as i64, idx[1] as i64, idx[2] as i64])] = Complex64::new(*v, 0.0);
    }
    fft::fft_nd(&mut rho_hat, &shape);
    let radii: Vec<usize> = (0..=n / 2).collect();
    let averages: Vec<Vec<f64>> = radii
        .par_iter()
        .map(|&k| {
            let ball = ball_offsets(grid, k);
            let count = ball.len() as f64;
            // Correlation with the ball: avg(y) = sum_{m in ball} rho(y + m) / count.
            let mut ind = vec![ZERO; total];
            for m in &ball {
                ind[embed([-m[0], -m[1], -m[2]])] += Complex64::new(1.0, 0.0);
            }
            fft::fft_nd(&mut ind, &shape);
            for (a, b) in ind.iter_mut().zip(&rho_hat) {
                *a *= b;
            }
            fft::ifft_nd(&mut ind, &shape);
            (0..grid.cells())
                .map(|i| {
                    let idx = grid.unravel(i);
                    ind[embed([idx[0] as i64, idx[1] as i64, idx[2] as i64])].re / count
                })
                .collect()
        })
        .collect();
    let mut best = vec![0.0f64; grid.cells()];
    for avg in &averages {
        for (b, a) in best.iter_mut().zip(avg) {
            *b = b.max(*a);
        }
    }
    // Centers within one cell of z.
    let mut out = best.clone();
    let nn = n as i64;
    for (i, o) in out.iter_mut().enumerate() {
        let idx = grid.unravel(i);
        for e in 0..3usize.pow(dim as u32) {
            let mut rem = e;
            let mut nb = [0usize; 3];
            let mut inside = true;
            for a in 0..dim {
                let shift = (rem % 3) as i64 - 1;
                rem /= 3;
                let c = idx[a] as i64 + shift;
                if periodic {
                    nb[a] = c.rem_euclid(nn) as usize;
                } else if c < 0 || c >= nn {
                    inside = false;
                } else {
                    nb[a] = c as usize;
                }
            }
            if inside {
                *o = o.max(best[grid.ravel(nb)]);
            }
        }
    }
    // Round-off in the FFT correlation can leave tiny negative excursions.
    for (o, r) in out.iter_mut().zip(rho) {
        *o = o.max(*r);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tr1Report {
    pub lhs: f64,
    pub rhs_shape: f64,
    pub ratio: f64,
}

/// Evaluates the Gaussian-localized trace-norm bound for one orbital set.
///
/// The commutator densities for `x_1..x_3` and their maximal functions are
/// computed once and reused across `(r, z)` samples.
pub struct Tr1Checker<'a> {
    set: &'a OrbitalSet,
    l1: [f64; 3],
    maximal: [Vec<f64>; 3],
}

impl<'a> Tr1Checker<'a> {
    pub fn new(set: &'a OrbitalSet) -> Result<Self> {
        if set.grid.dim() != 3 {
            return Err(Error::Unsupported("the trace-norm bound is three-dimensional; use d = 3".into()));
        }
        let mut l1 = [0.0; 3];
        let mut maximal: [Vec<f64>; 3] = Default::default();
        for axis in 0..3 {
            let dens = abs_density(&commutator_spectrum(set, &Weight::Position { axis })?);
            l1[axis] = dens.l1();
            maximal[axis] = maximal_function(&set.grid, &dens.values)?;
        }
        Ok(Self { set, l1, maximal })
    }

    fn nearest_cell(&self, z: &[f64; 3]) -> usize {
        let g = &self.set.grid;
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let j = ((z[a] + 0.5 * g.length()) / g.spacing()).round() as i64;
            idx[a] = match g.geometry() {
                Geometry::Torus => j.rem_euclid(g.n() as i64) as usize,
                Geometry::Box => j.clamp(0, g.n() as i64 - 1) as usize,
            };
        }
        g.ravel(idx)
    }

    pub fn check(&self, r: f64, z: [f64; 3], delta: f64) -> Result<Tr1Report> {
        if !(delta > 0.0 && delta < 0.5) {
            return Err(Error::InvalidArgument(format!("delta must lie in (0, 1/2) (got {delta})")));
        }
        let lhs = commutator_spectrum(self.set, &Weight::Gaussian { r, z })?.trace_norm();
        let cell = self.nearest_cell(&z);
        let rhs_shape = r.powf(1.5 - 3.0 * delta)
            * (0..3)
                .map(|a| self.l1[a].powf(1.0 / 6.0 + delta) * self.maximal[a][cell].powf(5.0 / 6.0 - delta))
                .sum::<f64>();
        Ok(Tr1Report { lhs, rhs_shape, ratio: lhs / rhs_shape })
    }
}

/// One-shot form of [`Tr1Checker::check`].
pub fn tr1_bound_check(set: &OrbitalSet, r: f64, z: [f64; 3], delta: f64) -> Result<Tr1Report> {
    if !(delta > 0.0 && delta < 0.5) {
        return Err(Error::InvalidArgument(format!("delta must lie in (0, 1/2) (got {delta})")));
    }
    Tr1Checker::new(set)?.check(r, z, delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::make_grid;

    #[test]
    fn constant_density_maximal_function() {
        let g = make_grid(2, 8, 1.0, Geometry::Torus).unwrap();
        let rho = vec![0.7; 64];
        for v in maximal_function(&g, &rho).unwrap() {
            assert!((v - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn small_p_needs_override() {
        let g = make_grid(1, 16, 1.0, Geometry::Torus).unwrap();
        let set = crate::slater::fermi_sea(&g, 1, 0.5).unwrap().orbitals;
        let snaps = vec![(0.0, set)];
        assert!(assumption_scan(&snaps, ScanWeight::Gradient, 4.0, false).is_err());
        assert!(assumption_scan(&snaps, ScanWeight::Gradient, 4.0, true).is_ok());
    }

    #[test]
    fn delta_range_enforced() {
        let g = make_grid(3, 8, 1.0, Geometry::Torus).unwrap();
        let set = crate::slater::fermi_sea(&g, 1, 0.5).unwrap().orbitals;
        assert!(tr1_bound_check(&set, 0.3, [0.0; 3], 0.0).is_err());
        assert!(tr1_bound_check(&set, 0.3, [0.0; 3], 0.5).is_err());
    }
}
