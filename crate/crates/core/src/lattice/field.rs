use num_complex::Complex64;

use super::fft::{fft_nd, ifft_nd};
use super::grid::Grid;
use crate::error::{Error, Result};

/// Complex grid function stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub grid: Grid,
    pub values: Vec<Complex64>,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.cells() {
            return Err(Error::GridMismatch(format!(
                "field has {} values, grid has {} cells",
                values.len(),
                grid.cells()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self { grid, values: vec![Complex64::new(0.0, 0.0); grid.cells()] }
    }

    pub fn from_fn(grid: Grid, f: impl Fn([f64; 3]) -> Complex64) -> Self {
        let values = (0..grid.cells()).map(|i| f(grid.position(i))).collect();
        Self { grid, values }
    }

    pub fn from_real(grid: Grid, values: &[f64]) -> Result<Self> {
        Self::new(grid, values.iter().map(|&v| Complex64::new(v, 0.0)).collect())
    }

    /// `<self, other> = h^d sum conj(self) other`.
    pub fn inner(&self, other: &Field) -> Complex64 {
        debug_assert_eq!(self.values.len(), other.values.len());
        inner(&self.grid, &self.values, &other.values)
    }

    pub fn norm_sqr(&self) -> f64 {
        norm_sqr(&self.grid, &self.values)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn scale(&mut self, s: Complex64) {
        for v in &mut self.values {
            *v *= s;
        }
    }

    /// `self += a * x`.
    pub fn axpy(&mut self, a: Complex64, x: &Field) {
        for (v, w) in self.values.iter_mut().zip(&x.values) {
            *v += a * w;
        }
    }

    pub fn real_parts(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }

    /// Fourier coefficients in FFT order (unnormalized DFT).
    pub fn fourier(&self) -> Vec<Complex64> {
        let mut out = self.values.clone();
        fft_nd(&mut out, &self.grid.shape());
        out
    }

    pub fn from_fourier(grid: Grid, mut coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != grid.cells() {
            return Err(Error::GridMismatch("coefficient count does not match grid".into()));
        }
        ifft_nd(&mut coeffs, &grid.shape());
        Ok(Self { grid, values: coeffs })
    }

    /// `||f||^2` evaluated from the Fourier coefficients.
    pub fn norm_sqr_momentum(&self) -> f64 {
        let total: f64 = self.fourier().iter().map(|c| c.norm_sqr()).sum();
        total * self.grid.cell_volume() / self.grid.cells() as f64
    }
}

pub fn inner(grid: &Grid, a: &[Complex64], b: &[Complex64]) -> Complex64 {
    let s: Complex64 = a.iter().zip(b).map(|(x, y)| x.conj() * y).sum();
    s * grid.cell_volume()
}

pub fn norm_sqr(grid: &Grid, a: &[Complex64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>() * grid.cell_volume()
}

/// Discrete `L^p` norm `(h^d sum |f|^p)^(1/p)`; `p = inf` gives the max.
pub fn lp_norm(grid: &Grid, values: &[f64], p: f64) -> Result<f64> {
    if p.is_nan() || p < 1.0 {
        return Err(Error::InvalidArgument(format!("L^p norm needs p >= 1 (got {p})")));
    }
    if values.len() != grid.cells() {
        return Err(Error::GridMismatch("density length does not match grid".into()));
    }
    if p.is_infinite() {
        return Ok(values.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    }
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Ok(0.0);
    }
    // Normalize by the max so large p does not overflow.
    let sum: f64 = values.iter().map(|v| (v.abs() / scale).powf(p)).sum();
    Ok(scale * (sum * grid.cell_volume()).powf(1.0 / p))
}
