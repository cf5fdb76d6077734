//! Small dense helpers and a Lanczos matrix exponential.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub(crate) const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

pub(crate) fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub(crate) fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// Tuning for [`expm_hermitian`].
#[derive(Debug, Clone, Copy)]
pub struct KrylovOptions {
    pub max_dim: usize,
    /// Target error relative to `||v||`.
    pub tol: f64,
    pub max_substeps: usize,
}

impl Default for KrylovOptions {
    fn default() -> Self {
        Self { max_dim: 30, tol: 1e-13, max_substeps: 256 }
    }
}

/// Computes `exp(-i t A) v` for Hermitian `A` given as a matrix-vector product.
///
/// `first` may carry a precomputed `A v`. The step is split into substeps
/// when the Krylov space runs out before reaching the tolerance.
pub fn expm_hermitian(
    apply: &mut dyn FnMut(&[Complex64]) -> Vec<Complex64>,
    v: &[Complex64],
    t: f64,
    first: Option<Vec<Complex64>>,
    opts: &KrylovOptions,
) -> Result<Vec<Complex64>> {
    let beta0 = norm(v);
    if beta0 == 0.0 || t == 0.0 {
        return Ok(v.to_vec());
    }
    let mut state = v.to_vec();
    let mut remaining = t;
    let mut tau = t;
    let mut first = first;
    let mut substeps = 0usize;
    while remaining.abs() > 0.0 {
        if tau.abs() > remaining.abs() {
            tau = remaining;
        }
        match krylov_step(apply, &state, tau, first.take(), opts)? {
            (Some(next), _) => {
                state = next;
                remaining -= tau;
                substeps += 1;
            }
            (None, est) => {
                tau *= 0.5;
                substeps += 1;
                if substeps > opts.max_substeps {
                    return Err(Error::Krylov { estimate: est });
                }
            }
        }
        if substeps > opts.max_substeps {
            return Err(Error::Krylov { estimate: f64::NAN });
        }
    }
    Ok(state)
}

/// One Lanczos exponential; returns `None` (with the error estimate) if the
/// space is exhausted before the tolerance is met.
fn krylov_step(
    apply: &mut dyn FnMut(&[Complex64]) -> Vec<Complex64>,
    v: &[Complex64],
    t: f64,
    first: Option<Vec<Complex64>>,
    opts: &KrylovOptions,
) -> Result<(Option<Vec<Complex64>>, f64)> {
    let len = v.len();
    let beta0 = norm(v);
    let mut basis: Vec<Vec<Complex64>> = vec![v.iter().map(|x| x / beta0).collect()];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut first = first.map(|mut w| {
        for x in &mut w {
            *x /= beta0;
        }
        w
    });
    let max_dim = opts.max_dim.min(len).max(1);
    let mut last_est = f64::INFINITY;
    for j in 0..max_dim {
        let mut w = match first.take() {
            Some(w) => w,
            None => apply(&basis[j]),
        };
        let a = dot(&basis[j], &w).re;
        alpha.push(a);
        // Full reorthogonalization, twice.
        for _ in 0..2 {
            for q in &basis {
                let c = dot(q, &w);
                for (x, y) in w.iter_mut().zip(q) {
                    *x -= c * y;
                }
            }
        }
        let b = norm(&w);
        let m = j + 1;
        let (coeffs, tail) = small_expm(&alpha, &beta, t, m);
        let est = b * tail * beta0;
        last_est = est;
        let hnorm = alpha.iter().map(|a| a.abs()).fold(0.0, f64::max).max(1.0);
        if est <= opts.tol * beta0 || b <= 1e-14 * hnorm || m == len {
            let mut out = vec![ZERO; len];
            for (c, q) in coeffs.iter().zip(&basis) {
                let c = c * beta0;
                for (o, x) in out.iter_mut().zip(q) {
                    *o += c * x;
                }
            }
            return Ok((Some(out), est));
        }
        beta.push(b);
        basis.push(w.into_iter().map(|x| x / b).collect());
    }
    Ok((None, last_est))
}

/// `exp(-i t T) e_1` for the tridiagonal `T`; also returns `|last entry|`.
fn small_expm(alpha: &[f64], beta: &[f64], t: f64, m: usize) -> (Vec<Complex64>, f64) {
    let mut tri = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        tri[(i, i)] = alpha[i];
        if i + 1 < m {
            tri[(i, i + 1)] = beta[i];
            tri[(i + 1, i)] = beta[i];
        }
    }
    let eig = tri.symmetric_eigen();
    let mut out = vec![ZERO; m];
    for k in 0..m {
        let phase = Complex64::from_polar(1.0, -t * eig.eigenvalues[k]);
        let w = eig.eigenvectors[(0, k)];
        for i in 0..m {
            out[i] += phase * w * eig.eigenvectors[(i, k)];
        }
    }
    let tail = out[m - 1].norm();
    (out, tail)
}

/// Hermitian eigen-decomposition with eigenvalues ascending.
pub fn hermitian_eigen(m: &DMatrix<Complex64>) -> (Vec<f64>, DMatrix<Complex64>) {
    let eig = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

/// Singular values, descending.
pub fn singular_values(m: &DMatrix<Complex64>) -> Vec<f64> {
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

pub fn trace_norm(m: &DMatrix<Complex64>) -> f64 {
    singular_values(m).iter().sum()
}

pub fn frobenius(m: &DMatrix<Complex64>) -> f64 {
    m.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// Dense `exp(-i t H)` for Hermitian `H`.
pub fn expm_hermitian_dense(h: &DMatrix<Complex64>, t: f64) -> DMatrix<Complex64> {
    let (vals, vecs) = hermitian_eigen(h);
    let n = h.nrows();
    let d = DVector::from_iterator(n, vals.iter().map(|&l| Complex64::from_polar(1.0, -t * l)));
    let scaled = DMatrix::from_fn(n, n, |r, c| vecs[(r, c)] * d[c]);
    scaled * vecs.adjoint()
}
