//! Finite-mode fermionic Fock space.
//!
//! Basis states are `M`-bit integers, bit `j` set meaning mode `j` is
//! occupied. `a*_j` picks up the sign `(-1)^{#occupied modes below j}`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::{kinetic_in_place, Convolver, ExternalPotential, Potential};
use crate::linalg::{dot, expm_hermitian, expm_hermitian_dense, norm, KrylovOptions, ZERO};
use crate::slater::OrbitalSet;

pub const MAX_MODES: usize = 14;

/// Particle-hole frames store `Gamma(U)` densely per sector.
pub const MAX_FRAME_MODES: usize = 12;

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

fn sign_below(state: usize, j: usize) -> f64 {
    if (state & ((1usize << j) - 1)).count_ones() % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// `a_j |state>` as `(new state, sign)`.
pub fn annihilate(state: usize, j: usize) -> Option<(usize, f64)> {
    (state & (1 << j) != 0).then(|| (state ^ (1 << j), sign_below(state, j)))
}

/// `a*_j |state>` as `(new state, sign)`.
pub fn create(state: usize, j: usize) -> Option<(usize, f64)> {
    (state & (1 << j) == 0).then(|| (state | (1 << j), sign_below(state, j)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FockBasis {
    modes: usize,
}

impl FockBasis {
    pub fn new(modes: usize) -> Result<Self> {
        if modes == 0 || modes > MAX_MODES {
            return Err(Error::InvalidArgument(format!("mode count must lie in 1..={MAX_MODES} (got {modes})")));
        }
        Ok(Self { modes })
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn dim(&self) -> usize {
        1 << self.modes
    }

    /// Basis states with `k` particles, ascending.
    pub fn sector(&self, k: usize) -> Vec<usize> {
        (0..self.dim()).filter(|s| s.count_ones() as usize == k).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FockVector {
    pub basis: FockBasis,
    pub values: Vec<Complex64>,
}

impl FockVector {
    pub fn new(basis: FockBasis, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != basis.dim() {
            return Err(Error::InvalidArgument(format!("expected {} amplitudes, got {}", basis.dim(), values.len())));
        }
        Ok(Self { basis, values })
    }

    pub fn vacuum(basis: FockBasis) -> Self {
        let mut values = vec![ZERO; basis.dim()];
        values[0] = c(1.0);
        Self { basis, values }
    }

    pub fn basis_state(basis: FockBasis, state: usize) -> Self {
        let mut values = vec![ZERO; basis.dim()];
        values[state] = c(1.0);
        Self { basis, values }
    }

    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }

    pub fn inner(&self, other: &FockVector) -> Complex64 {
        dot(&self.values, &other.values)
    }

    /// `<N>`.
    pub fn number_expectation(&self) -> f64 {
        self.values.iter().enumerate().map(|(s, v)| v.norm_sqr() * s.count_ones() as f64).sum()
    }
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<Complex64>,
}

impl SparseMatrix {
    /// Sums duplicate entries and drops exact zeros.
    pub fn from_triplets(dim: usize, mut triplets: Vec<(usize, usize, Complex64)>) -> Self {
        triplets.sort_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0usize; dim + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<Complex64> = Vec::with_capacity(triplets.len());
        let mut rows = Vec::with_capacity(triplets.len());
        for (r, col, v) in triplets {
            if let (Some(&lr), Some(&lc)) = (rows.last(), cols.last()) {
                if lr == r && lc == col {
                    *vals.last_mut().unwrap() += v;
                    continue;
                }
            }
            rows.push(r);
            cols.push(col);
            vals.push(v);
        }
        let keep: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] != ZERO).collect();
        let rows: Vec<usize> = keep.iter().map(|&i| rows[i]).collect();
        let cols: Vec<usize> = keep.iter().map(|&i| cols[i]).collect();
        let vals: Vec<Complex64> = keep.iter().map(|&i| vals[i]).collect();
        for &r in &rows {
            row_ptr[r + 1] += 1;
        }
        for i in 0..dim {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self { dim, row_ptr, cols, vals }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_triplets(dim, (0..dim).map(|i| (i, i, c(1.0))).collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    fn triplets(&self) -> Vec<(usize, usize, Complex64)> {
        let mut out = Vec::with_capacity(self.nnz());
        for r in 0..self.dim {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                out.push((r, self.cols[k], self.vals[k]));
            }
        }
        out
    }

    pub fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        (0..self.dim)
            .into_par_iter()
            .map(|r| {
                let mut acc = ZERO;
                for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                    acc += self.vals[k] * x[self.cols[k]];
                }
                acc
            })
            .collect()
    }

    pub fn adjoint(&self) -> Self {
        Self::from_triplets(self.dim, self.triplets().into_iter().map(|(r, c, v)| (c, r, v.conj())).collect())
    }

    pub fn matmul(&self, other: &SparseMatrix) -> Self {
        let mut trip = Vec::new();
        for r in 0..self.dim {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let mid = self.cols[k];
                for q in other.row_ptr[mid]..other.row_ptr[mid + 1] {
                    trip.push((r, other.cols[q], self.vals[k] * other.vals[q]));
                }
            }
        }
        Self::from_triplets(self.dim, trip)
    }

    /// `self + alpha other`.
    pub fn add_scaled(&self, other: &SparseMatrix, alpha: Complex64) -> Self {
        let mut trip = self.triplets();
        trip.extend(other.triplets().into_iter().map(|(r, c, v)| (r, c, v * alpha)));
        Self::from_triplets(self.dim, trip)
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0, |m, v| m.max(v.norm()))
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (r, col, v) in self.triplets() {
            m[(r, col)] += v;
        }
        m
    }

    pub fn get(&self, r: usize, col: usize) -> Complex64 {
        (self.row_ptr[r]..self.row_ptr[r + 1]).find(|&k| self.cols[k] == col).map_or(ZERO, |k| self.vals[k])
    }

    /// Coordinate text dump, one `row col re im` line per entry.
    pub fn to_coordinate_text(&self) -> String {
        let mut out = String::new();
        for (r, col, v) in self.triplets() {
            out.push_str(&format!("{r} {col} {:.17e} {:.17e}\n", v.re, v.im));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OperatorTags {
    pub number_conserving: bool,
    pub quadratic: bool,
    pub quartic: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FockOperator {
    pub basis: FockBasis,
    pub matrix: SparseMatrix,
    pub tags: OperatorTags,
}

impl FockOperator {
    pub fn apply(&self, v: &FockVector) -> FockVector {
        FockVector { basis: self.basis, values: self.matrix.apply(&v.values) }
    }

    pub fn adjoint(&self) -> Self {
        Self { basis: self.basis, matrix: self.matrix.adjoint(), tags: self.tags }
    }

    pub fn matmul(&self, other: &FockOperator) -> Self {
        Self { basis: self.basis, matrix: self.matrix.matmul(&other.matrix), tags: OperatorTags::default() }
    }

    /// `self + alpha other`.
    pub fn add_scaled(&self, other: &FockOperator, alpha: Complex64) -> Self {
        Self { basis: self.basis, matrix: self.matrix.add_scaled(&other.matrix, alpha), tags: OperatorTags::default() }
    }

    /// `{self, other}`.
    pub fn anticommutator(&self, other: &FockOperator) -> Self {
        self.matmul(other).add_scaled(&other.matmul(self), c(1.0))
    }

    /// `[self, other]`.
    pub fn commutator(&self, other: &FockOperator) -> Self {
        self.matmul(other).add_scaled(&other.matmul(self), c(-1.0))
    }
}

#[derive(Debug, Clone)]
pub struct CarOps {
    pub annihilation: Vec<FockOperator>,
    pub creation: Vec<FockOperator>,
}

/// `a_j` and `a*_j` for all modes.
pub fn car_ops(modes: usize) -> Result<CarOps> {
    let basis = FockBasis::new(modes)?;
    let tags = OperatorTags::default();
    let annihilation: Vec<FockOperator> = (0..modes)
        .map(|j| {
            let trip = (0..basis.dim())
                .filter_map(|s| annihilate(s, j).map(|(t, sg)| (t, s, c(sg))))
                .collect();
            FockOperator { basis, matrix: SparseMatrix::from_triplets(basis.dim(), trip), tags }
        })
        .collect();
    let creation = annihilation.iter().map(|a| a.adjoint()).collect();
    Ok(CarOps { annihilation, creation })
}

fn check_square(j: &DMatrix<Complex64>, modes: usize) -> Result<()> {
    if j.nrows() != modes || j.ncols() != modes {
        return Err(Error::InvalidArgument(format!(
            "one-body matrix must be {modes}x{modes} (got {}x{})",
            j.nrows(),
            j.ncols()
        )));
    }
    Ok(())
}

/// `a(f) = sum_j conj(f_j) a_j`.
pub fn annihilation_of(basis: FockBasis, f: &[Complex64]) -> Result<FockOperator> {
    if f.len() != basis.modes() {
        return Err(Error::InvalidArgument("mode vector has the wrong length".into()));
    }
    let mut trip = Vec::new();
    for s in 0..basis.dim() {
        for (j, fj) in f.iter().enumerate() {
            if let Some((t, sg)) = annihilate(s, j) {
                trip.push((t, s, fj.conj() * sg));
            }
        }
    }
    Ok(FockOperator { basis, matrix: SparseMatrix::from_triplets(basis.dim(), trip), tags: OperatorTags::default() })
}

/// `a*(f) = sum_j f_j a*_j`.
pub fn creation_of(basis: FockBasis, f: &[Complex64]) -> Result<FockOperator> {
    Ok(annihilation_of(basis, f)?.adjoint())
}

/// `dGamma(J) = sum_ij J_ij a*_i a_j`.
pub fn dgamma(basis: FockBasis, j: &DMatrix<Complex64>) -> Result<FockOperator> {
    let m = basis.modes();
    check_square(j, m)?;
    let mut trip = Vec::new();
    for s in 0..basis.dim() {
        for b in 0..m {
            let Some((s1, g1)) = annihilate(s, b) else { continue };
            for a in 0..m {
                let jab = j[(a, b)];
                if jab == ZERO {
                    continue;
                }
                if let Some((s2, g2)) = create(s1, a) {
                    trip.push((s2, s, jab * (g1 * g2)));
                }
            }
        }
    }
    let tags = OperatorTags { number_conserving: true, quadratic: true, quartic: false };
    Ok(FockOperator { basis, matrix: SparseMatrix::from_triplets(basis.dim(), trip), tags })
}

pub fn number_operator(basis: FockBasis) -> FockOperator {
    let trip = (0..basis.dim()).map(|s| (s, s, c(s.count_ones() as f64))).collect();
    let tags = OperatorTags { number_conserving: true, quadratic: true, quartic: false };
    FockOperator { basis, matrix: SparseMatrix::from_triplets(basis.dim(), trip), tags }
}

/// `sum_xy J_xy a_x a_y`.
pub fn pair_annihilation(basis: FockBasis, j: &DMatrix<Complex64>) -> Result<FockOperator> {
    let m = basis.modes();
    check_square(j, m)?;
    let mut trip = Vec::new();
    for s in 0..basis.dim() {
        for y in 0..m {
            let Some((s1, g1)) = annihilate(s, y) else { continue };
            for x in 0..m {
                if let Some((s2, g2)) = annihilate(s1, x) {
                    trip.push((s2, s, j[(x, y)] * (g1 * g2)));
                }
            }
        }
    }
    let tags = OperatorTags { number_conserving: false, quadratic: true, quartic: false };
    Ok(FockOperator { basis, matrix: SparseMatrix::from_triplets(basis.dim(), trip), tags })
}

/// `gamma_xy = <Psi, a*_y a_x Psi>`.
pub fn reduced_density_fock(psi: &FockVector) -> DMatrix<Complex64> {
    let m = psi.basis.modes();
    let mut gamma = DMatrix::zeros(m, m);
    for (s, v) in psi.values.iter().enumerate() {
        if *v == ZERO {
            continue;
        }
        for x in 0..m {
            let Some((s1, g1)) = annihilate(s, x) else { continue };
            for y in 0..m {
                if let Some((s2, g2)) = create(s1, y) {
                    gamma[(x, y)] += psi.values[s2].conj() * v * (g1 * g2);
                }
            }
        }
    }
    gamma
}

/// `a*(f_1) ... a*(f_N) Omega` for orbitals given as the columns of `orbitals`.
pub fn slater_state(basis: FockBasis, orbitals: &DMatrix<Complex64>) -> Result<FockVector> {
    if orbitals.nrows() != basis.modes() {
        return Err(Error::InvalidArgument("orbital coefficients have the wrong length".into()));
    }
    let mut psi = FockVector::vacuum(basis);
    for j in (0..orbitals.ncols()).rev() {
        let f: Vec<Complex64> = orbitals.column(j).iter().copied().collect();
        psi = creation_of(basis, &f)?.apply(&psi);
    }
    Ok(psi)
}

/// Two-body coefficients `V_ijkl = int conj(phi_i(x) phi_j(y)) V(x - y) phi_k(x) phi_l(y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoBody {
    modes: usize,
    values: Vec<Complex64>,
}

impl TwoBody {
    pub fn zeros(modes: usize) -> Self {
        Self { modes, values: vec![ZERO; modes.pow(4)] }
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    fn idx(&self, i: usize, j: usize, k: usize, l: usize) -> usize {
        ((i * self.modes + j) * self.modes + k) * self.modes + l
    }

    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> Complex64 {
        self.values[self.idx(i, j, k, l)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, l: usize, v: Complex64) {
        let q = self.idx(i, j, k, l);
        self.values[q] = v;
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == ZERO)
    }

    pub fn scaled(&self, f: f64) -> Self {
        Self { modes: self.modes, values: self.values.iter().map(|v| v * f).collect() }
    }

    /// Largest violation of `V_ijkl = V_jilk` and `V_ijkl = conj(V_klij)`.
    pub fn symmetry_error(&self) -> f64 {
        let m = self.modes;
        let mut worst = 0.0f64;
        for i in 0..m {
            for j in 0..m {
                for k in 0..m {
                    for l in 0..m {
                        let v = self.get(i, j, k, l);
                        worst = worst.max((v - self.get(j, i, l, k)).norm());
                        worst = worst.max((v - self.get(k, l, i, j).conj()).norm());
                    }
                }
            }
        }
        worst
    }
}

/// One-body and two-body matrices in a grid-defined mode basis.
#[derive(Debug, Clone)]
pub struct ModeBasis {
    pub h: DMatrix<Complex64>,
    pub v: TwoBody,
    pub eps: f64,
}

/// `h_ab = <phi_a, (-eps^2 Laplacian + V_ext) phi_b>` and `V_ijkl` by quadrature,
/// with the pair potential applied through the grid convolution.
pub fn mode_basis(modes: &OrbitalSet, potential: &Potential, external: &ExternalPotential) -> Result<ModeBasis> {
    let m = modes.len();
    if m == 0 || m > MAX_MODES {
        return Err(Error::InvalidArgument(format!("mode count must lie in 1..={MAX_MODES} (got {m})")));
    }
    let grid = modes.grid;
    let w = grid.cell_volume();
    let phi = &modes.orbitals;
    let vext = external.sample(&grid);
    let hphi: Vec<Vec<Complex64>> = phi
        .iter()
        .map(|f| {
            let mut g = f.clone();
            kinetic_in_place(&grid, &mut g, modes.eps);
            for (a, (b, v)) in g.iter_mut().zip(f.iter().zip(&vext)) {
                *a += b * v;
            }
            g
        })
        .collect();
    let h0 = DMatrix::from_fn(m, m, |a, b| dot(&phi[a], &hphi[b]) * w);
    let h = (&h0 + h0.adjoint()) * c(0.5);
    let conv = Convolver::new(&grid, potential)?;
    let mut v = TwoBody::zeros(m);
    if !conv.is_zero() {
        let pairs: Vec<(usize, usize)> = (0..m).flat_map(|j| (0..m).map(move |l| (j, l))).collect();
        let blocks: Vec<Vec<Complex64>> = pairs
            .par_iter()
            .map(|&(j, l)| {
                let g: Vec<Complex64> = phi[j].iter().zip(&phi[l]).map(|(a, b)| a.conj() * b).collect();
                let u = conv.apply(&g);
                let mut out = vec![ZERO; m * m];
                for i in 0..m {
                    for k in 0..m {
                        let s: Complex64 = phi[i].iter().zip(&phi[k]).zip(&u).map(|((a, b), x)| a.conj() * b * x).sum();
                        out[i * m + k] = s * w;
                    }
                }
                out
            })
            .collect();
        for (&(j, l), block) in pairs.iter().zip(&blocks) {
            for i in 0..m {
                for k in 0..m {
                    v.set(i, j, k, l, block[i * m + k]);
                }
            }
        }
    }
    Ok(ModeBasis { h, v, eps: modes.eps })
}

/// `H = dGamma(h) + (2N)^-1 sum V_ijkl a*_i a*_j a_l a_k`, generating `exp(-i H t / eps)`.
#[derive(Debug, Clone)]
pub struct FockHamiltonian {
    pub operator: FockOperator,
    pub n_particles: usize,
    pub eps: f64,
}

pub fn fock_hamiltonian(h: &DMatrix<Complex64>, v: &TwoBody, n_particles: usize, eps: f64) -> Result<FockHamiltonian> {
    let m = v.modes();
    let basis = FockBasis::new(m)?;
    check_square(h, m)?;
    if n_particles == 0 {
        return Err(Error::InvalidArgument("N must be positive".into()));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument("epsilon must be positive".into()));
    }
    let hscale = h.iter().fold(1.0f64, |a, x| a.max(x.norm()));
    let herm = (h - h.adjoint()).iter().fold(0.0f64, |a, x| a.max(x.norm()));
    if herm > 1e-12 * hscale {
        return Err(Error::InvalidArgument(format!("one-body matrix is not Hermitian (error {herm:.3e})")));
    }
    let vscale = v.values.iter().fold(1.0f64, |a, x| a.max(x.norm()));
    let sym = v.symmetry_error();
    if sym > 1e-10 * vscale {
        return Err(Error::InvalidArgument(format!("two-body coefficients break the fermionic symmetries (error {sym:.3e})")));
    }
    let mut op = dgamma(basis, h)?;
    if !v.is_zero() {
        let pref = 0.5 / n_particles as f64;
        let rows: Vec<Vec<(usize, usize, Complex64)>> = (0..basis.dim())
            .into_par_iter()
            .map(|s| {
                let mut trip = Vec::new();
                for k in 0..m {
                    let Some((s1, g1)) = annihilate(s, k) else { continue };
                    for l in 0..m {
                        let Some((s2, g2)) = annihilate(s1, l) else { continue };
                        for j in 0..m {
                            let Some((s3, g3)) = create(s2, j) else { continue };
                            for i in 0..m {
                                let Some((s4, g4)) = create(s3, i) else { continue };
                                let val = v.get(i, j, k, l);
                                if val != ZERO {
                                    trip.push((s4, s, val * (pref * g1 * g2 * g3 * g4)));
                                }
                            }
                        }
                    }
                }
                trip
            })
            .collect();
        let quartic = SparseMatrix::from_triplets(basis.dim(), rows.into_iter().flatten().collect());
        op.matrix = op.matrix.add_scaled(&quartic, c(1.0));
        op.tags.quartic = true;
    }
    op.tags.number_conserving = true;
    Ok(FockHamiltonian { operator: op, n_particles, eps })
}

fn check_orbitals(orbitals: &DMatrix<Complex64>) -> Result<()> {
    let n = orbitals.ncols();
    if n == 0 || n > orbitals.nrows() {
        return Err(Error::InvalidArgument(format!(
            "need 1..={} orbitals (got {n})",
            orbitals.nrows()
        )));
    }
    let gram = orbitals.adjoint() * orbitals;
    let err = (gram - DMatrix::<Complex64>::identity(n, n)).iter().fold(0.0f64, |a, x| a.max(x.norm()));
    if err > 1e-10 {
        return Err(Error::InvalidArgument(format!(
            "orbital coefficients are rank deficient or not orthonormal (gram error {err:.3e})"
        )));
    }
    Ok(())
}

/// Completes orthonormal columns to a unitary by Gram-Schmidt against the
/// standard basis, always taking the unit vector with the largest residual.
pub fn complete_unitary(orbitals: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
    check_orbitals(orbitals)?;
    let m = orbitals.nrows();
    let mut cols: Vec<Vec<Complex64>> = orbitals.column_iter().map(|c| c.iter().copied().collect()).collect();
    let mut used = vec![false; m];
    while cols.len() < m {
        let mut best: Option<(usize, Vec<Complex64>, f64)> = None;
        for (e, _) in used.iter().enumerate().filter(|(_, u)| !**u) {
            let mut r = vec![ZERO; m];
            r[e] = c(1.0);
            for _ in 0..2 {
                for q in &cols {
                    let p = dot(q, &r);
                    for (a, b) in r.iter_mut().zip(q) {
                        *a -= p * b;
                    }
                }
            }
            let nr = norm(&r);
            if best.as_ref().is_none_or(|b| nr > b.2 * (1.0 + 1e-12)) {
                best = Some((e, r, nr));
            }
        }
        let (e, r, nr) = best.ok_or_else(|| Error::InvalidArgument("completion failed".into()))?;
        used[e] = true;
        cols.push(r.into_iter().map(|x| x / nr).collect());
    }
    Ok(DMatrix::from_fn(m, m, |r, col| cols[col][r]))
}

/// Number-conserving `Gamma(U)` with `Gamma(U) a*_j Gamma(U)* = a*(U e_j)`,
/// stored as dense sector blocks of minor determinants.
#[derive(Debug, Clone)]
struct SectorUnitary {
    /// Per particle number: sector states and the block `<t|Gamma(U)|s>`.
    blocks: Vec<(Vec<usize>, DMatrix<Complex64>)>,
}

impl SectorUnitary {
    fn new(basis: FockBasis, u: &DMatrix<Complex64>) -> Self {
        let m = basis.modes();
        let blocks = (0..=m)
            .map(|k| {
                let states = basis.sector(k);
                let bits: Vec<Vec<usize>> = states.iter().map(|&s| (0..m).filter(|&j| s & (1 << j) != 0).collect()).collect();
                let d = states.len();
                let entries: Vec<Complex64> = (0..d * d)
                    .into_par_iter()
                    .map(|q| {
                        let (t, s) = (q % d, q / d);
                        if k == 0 {
                            return c(1.0);
                        }
                        DMatrix::from_fn(k, k, |a, b| u[(bits[t][a], bits[s][b])]).determinant()
                    })
                    .collect();
                (states, DMatrix::from_column_slice(d, d, &entries))
            })
            .collect();
        Self { blocks }
    }

    fn apply(&self, x: &[Complex64], adjoint: bool) -> Vec<Complex64> {
        let mut out = vec![ZERO; x.len()];
        for (states, block) in &self.blocks {
            let d = states.len();
            for t in 0..d {
                let mut acc = ZERO;
                for s in 0..d {
                    let b = if adjoint { block[(s, t)].conj() } else { block[(t, s)] };
                    acc += b * x[states[s]];
                }
                out[states[t]] = acc;
            }
        }
        out
    }
}

/// Particle-hole transformation `R = Gamma(U) R_0 Gamma(U)*` for the
/// projection onto the first `N` columns of `U`.
#[derive(Debug, Clone)]
pub struct ParticleHoleFrame {
    pub basis: FockBasis,
    pub n_particles: usize,
    pub unitary: DMatrix<Complex64>,
    gamma: SectorUnitary,
    /// `R_0 |s> = sign[s] |target[s]>`.
    target: Vec<usize>,
    sign: Vec<f64>,
    source: Vec<usize>,
}

/// `R_0 |s>` as `(state, sign)`, where `R_0* a_j R_0 = a*_j` for `j < N`.
fn r0_image(s: usize, modes: usize, n: usize) -> (usize, f64) {
    let mut state = (1usize << n) - 1;
    let mut sign = 1.0;
    for j in (0..modes).rev() {
        if s & (1 << j) == 0 {
            continue;
        }
        let step = if j < n { annihilate(state, j) } else { create(state, j) };
        let (t, g) = step.expect("particle-hole relabeling is always defined");
        state = t;
        sign *= g;
    }
    (state, sign)
}

impl ParticleHoleFrame {
    /// Frame with the pivoted Gram-Schmidt completion.
    pub fn new(orbitals: &DMatrix<Complex64>) -> Result<Self> {
        let u = complete_unitary(orbitals)?;
        Self::with_unitary(&u, orbitals.ncols())
    }

    /// Frame for an explicit completion `U`; `omega` projects onto its first `n` columns.
    pub fn with_unitary(u: &DMatrix<Complex64>, n_particles: usize) -> Result<Self> {
        let m = u.nrows();
        if u.ncols() != m {
            return Err(Error::InvalidArgument("completion must be square".into()));
        }
        if m > MAX_FRAME_MODES {
            return Err(Error::InvalidArgument(format!(
                "particle-hole frames support at most {MAX_FRAME_MODES} modes (got {m})"
            )));
        }
        check_orbitals(u)?;
        if n_particles == 0 || n_particles > m {
            return Err(Error::InvalidArgument(format!("N = {n_particles} must lie in 1..={m}")));
        }
        let basis = FockBasis::new(m)?;
        let mut target = vec![0usize; basis.dim()];
        let mut sign = vec![0.0; basis.dim()];
        let mut source = vec![0usize; basis.dim()];
        for s in 0..basis.dim() {
            let (t, g) = r0_image(s, m, n_particles);
            target[s] = t;
            sign[s] = g;
            source[t] = s;
        }
        Ok(Self { basis, n_particles, unitary: u.clone(), gamma: SectorUnitary::new(basis, u), target, sign, source })
    }

    pub fn orbitals(&self) -> DMatrix<Complex64> {
        self.unitary.columns(0, self.n_particles).into_owned()
    }

    /// `omega = sum_j |f_j><f_j|` in the mode basis.
    pub fn omega(&self) -> DMatrix<Complex64> {
        let f = self.orbitals();
        &f * f.adjoint()
    }

    fn r0(&self, x: &[Complex64], adjoint: bool) -> Vec<Complex64> {
        if adjoint {
            // R_0* |target[s]> = sign[s] |s>.
            return (0..x.len()).map(|s| x[self.target[s]] * self.sign[s]).collect();
        }
        (0..x.len()).map(|t| x[self.source[t]] * self.sign[self.source[t]]).collect()
    }

    /// `R psi`.
    pub fn apply(&self, psi: &FockVector) -> FockVector {
        let a = self.gamma.apply(&psi.values, true);
        let b = self.r0(&a, false);
        FockVector { basis: self.basis, values: self.gamma.apply(&b, false) }
    }

    /// `R* psi`.
    pub fn apply_adjoint(&self, psi: &FockVector) -> FockVector {
        let a = self.gamma.apply(&psi.values, true);
        let b = self.r0(&a, true);
        FockVector { basis: self.basis, values: self.gamma.apply(&b, false) }
    }

    /// Dense matrix of `R` (small mode counts only).
    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let d = self.basis.dim();
        let mut m = DMatrix::zeros(d, d);
        for s in 0..d {
            let col = self.apply(&FockVector::basis_state(self.basis, s));
            for (t, v) in col.values.iter().enumerate() {
                m[(t, s)] = *v;
            }
        }
        m
    }
}

/// `<R* psi, N R* psi>`.
pub fn excitation_number(frame: &ParticleHoleFrame, psi: &FockVector) -> f64 {
    frame.apply_adjoint(psi).number_expectation()
}

/// `tr gamma (1 - omega) - tr gamma omega + N ||psi||^2`, the same quantity
/// expressed through the reduced density of `psi`.
pub fn excitation_identity(gamma: &DMatrix<Complex64>, omega: &DMatrix<Complex64>, n_particles: usize, norm_sqr: f64) -> f64 {
    let go = (gamma * omega).trace().re;
    gamma.trace().re - 2.0 * go + n_particles as f64 * norm_sqr
}

/// Hartree-Fock flow in a finite mode basis with Fock matrix
/// `F_ik = h_ik + N^-1 sum_jl (V_ijkl - V_ijlk) omega_lj`.
#[derive(Debug, Clone)]
pub struct ModeHartreeFock {
    pub h: DMatrix<Complex64>,
    pub v: TwoBody,
    pub n_particles: usize,
    pub eps: f64,
    pub exchange: bool,
}

impl ModeHartreeFock {
    pub fn new(basis: &ModeBasis, n_particles: usize) -> Self {
        Self { h: basis.h.clone(), v: basis.v.clone(), n_particles, eps: basis.eps, exchange: true }
    }

    pub fn fock_matrix(&self, omega: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let m = self.h.nrows();
        let inv_n = 1.0 / self.n_particles as f64;
        let mut f = self.h.clone();
        if self.v.is_zero() {
            return f;
        }
        for i in 0..m {
            for k in 0..m {
                let mut acc = ZERO;
                for j in 0..m {
                    for l in 0..m {
                        let w = omega[(l, j)];
                        let mut g = self.v.get(i, j, k, l);
                        if self.exchange {
                            g -= self.v.get(i, j, l, k);
                        }
                        acc += g * w;
                    }
                }
                f[(i, k)] += acc * inv_n;
            }
        }
        (&f + f.adjoint()) * c(0.5)
    }

    /// `tr h omega + (2N)^-1 sum (V_ijkl - V_ijlk) omega_ki omega_lj`.
    pub fn energy(&self, orbitals: &DMatrix<Complex64>) -> f64 {
        let omega = orbitals * orbitals.adjoint();
        let one = (&self.h * &omega).trace().re;
        let f = self.fock_matrix(&omega);
        let two = ((&f - &self.h) * &omega).trace().re;
        one + 0.5 * two
    }

    /// Exponential midpoint step `c_{n+1} = exp(-i dt F(omega_mid) / eps) c_n`.
    pub fn step(&self, orbitals: &DMatrix<Complex64>, dt: f64) -> Result<DMatrix<Complex64>> {
        let omega0 = orbitals * orbitals.adjoint();
        let mut next = expm_hermitian_dense(&self.fock_matrix(&omega0), dt / self.eps) * orbitals;
        if self.v.is_zero() {
            return Ok(next);
        }
        for _ in 0..50 {
            let omega1 = &next * next.adjoint();
            let mid = (&omega0 + &omega1) * c(0.5);
            let cand = expm_hermitian_dense(&self.fock_matrix(&mid), dt / self.eps) * orbitals;
            let diff = (&cand - &next).iter().fold(0.0f64, |a, x| a.max(x.norm()));
            next = cand;
            if diff <= 1e-14 {
                return Ok(next);
            }
        }
        Err(Error::FixedPoint { residual: f64::NAN, iterations: 50 })
    }
}

/// How the frame at each time completes `omega_t` to a unitary.
#[derive(Debug, Clone)]
pub enum Completion {
    Pivoted,
    /// Pivoted completion followed by a fixed unitary on the complement.
    Twisted(DMatrix<Complex64>),
}

impl Completion {
    pub fn frame(&self, orbitals: &DMatrix<Complex64>) -> Result<ParticleHoleFrame> {
        let n = orbitals.ncols();
        let u = complete_unitary(orbitals)?;
        match self {
            Completion::Pivoted => ParticleHoleFrame::with_unitary(&u, n),
            Completion::Twisted(w) => {
                let m = u.nrows();
                if w.nrows() != m - n || w.ncols() != m - n {
                    return Err(Error::InvalidArgument("twist must act on the complement".into()));
                }
                let mut d = DMatrix::<Complex64>::identity(m, m);
                d.view_mut((n, n), (m - n, m - n)).copy_from(w);
                ParticleHoleFrame::with_unitary(&(u * d), n)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluctuationSample {
    pub t: f64,
    /// `<U_N(t) xi, N U_N(t) xi>` through the particle-hole frame of `omega_t`.
    pub excitations: f64,
    /// The same quantity from `gamma_{Psi_t}` and `omega_t`.
    pub identity: f64,
    pub norm: f64,
}

/// Runs `Psi_t = exp(-i H t / eps) R_{omega_0} xi_0` alongside the mode-basis
/// Hartree-Fock flow and records the excitation number of
/// `U_N(t) xi_0 = R*_{omega_t} Psi_t`.
#[allow(clippy::too_many_arguments)]
pub fn fluctuation_evolution(
    xi0: &FockVector,
    orbitals0: &DMatrix<Complex64>,
    hf: &ModeHartreeFock,
    hamiltonian: &FockHamiltonian,
    t_final: f64,
    dt: f64,
    stride: usize,
    completion: &Completion,
) -> Result<Vec<FluctuationSample>> {
    if !(t_final > 0.0) || !(dt > 0.0) || dt > t_final * (1.0 + 1e-12) {
        return Err(Error::InvalidArgument(format!("need 0 < dt <= T (got dt = {dt}, T = {t_final})")));
    }
    if (xi0.norm() - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidArgument("initial fluctuation vector must be normalized".into()));
    }
    let steps = (t_final / dt).round().max(1.0) as usize;
    let dt = t_final / steps as f64;
    let stride = stride.max(1);
    let n = orbitals0.ncols();
    let frame0 = completion.frame(orbitals0)?;
    let mut psi = frame0.apply(xi0);
    let mut orbs = orbitals0.clone();
    let opts = KrylovOptions::default();
    let sample = |t: f64, psi: &FockVector, orbs: &DMatrix<Complex64>| -> Result<FluctuationSample> {
        let frame = completion.frame(orbs)?;
        let excitations = excitation_number(&frame, psi);
        let gamma = reduced_density_fock(psi);
        let norm = psi.norm();
        let identity = excitation_identity(&gamma, &frame.omega(), n, norm * norm);
        Ok(FluctuationSample { t, excitations, identity, norm: frame.apply_adjoint(psi).norm() })
    };
    let mut out = vec![sample(0.0, &psi, &orbs)?];
    let h = &hamiltonian.operator.matrix;
    for step in 1..=steps {
        psi.values = expm_hermitian(&mut |x| h.apply(x), &psi.values, dt / hamiltonian.eps, None, &opts)?;
        orbs = hf.step(&orbs, dt)?;
        if step % stride == 0 || step == steps {
            out.push(sample(step as f64 * dt, &psi, &orbs)?);
        }
    }
    Ok(out)
}
