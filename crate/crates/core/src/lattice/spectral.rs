use num_complex::Complex64;

use super::fft::{fft_nd, ifft_nd};
use super::field::Field;
use super::grid::{Geometry, Grid};
use crate::error::{Error, Result};

fn require_torus(grid: &Grid, what: &str) -> Result<()> {
    if grid.geometry() == Geometry::Box {
        return Err(Error::Unsupported(format!("{what} needs periodic wraparound; use a torus grid")));
    }
    Ok(())
}

/// Multiplies Fourier coefficients of `values` in place by `mult(flat_k)`.
pub fn apply_multiplier(grid: &Grid, values: &mut [Complex64], mult: impl Fn(usize) -> Complex64) {
    let shape = grid.shape();
    fft_nd(values, &shape);
    for (i, v) in values.iter_mut().enumerate() {
        *v *= mult(i);
    }
    ifft_nd(values, &shape);
}

/// `-eps^2 Laplacian` applied spectrally.
pub fn apply_kinetic(field: &Field, eps: f64) -> Result<Field> {
    require_torus(&field.grid, "apply_kinetic")?;
    let mut out = field.clone();
    kinetic_in_place(&field.grid, &mut out.values, eps);
    Ok(out)
}

pub(crate) fn kinetic_in_place(grid: &Grid, values: &mut [Complex64], eps: f64) {
    let e2 = eps * eps;
    apply_multiplier(grid, values, |i| Complex64::new(e2 * grid.k_squared(i), 0.0));
}

/// Free propagator `exp(-i tau eps |k|^2)`, i.e. `exp(-i tau (-eps^2 Lap) / eps)`.
pub fn kinetic_propagate(grid: &Grid, values: &mut [Complex64], eps: f64, tau: f64) {
    apply_multiplier(grid, values, |i| Complex64::from_polar(1.0, -tau * eps * grid.k_squared(i)));
}

/// Spectral partial derivative along `axis`; Nyquist mode zeroed.
pub fn derivative(field: &Field, axis: usize) -> Result<Field> {
    require_torus(&field.grid, "derivative")?;
    if axis >= field.grid.dim() {
        return Err(Error::InvalidArgument(format!("axis {axis} out of range")));
    }
    let grid = field.grid;
    let mut out = field.clone();
    apply_multiplier(&grid, &mut out.values, |i| {
        let idx = grid.unravel(i);
        Complex64::new(0.0, grid.derivative_wavenumber(idx[axis]))
    });
    Ok(out)
}

/// Trigonometric interpolation of `f(x + shift)`.
///
/// The Nyquist coefficient is treated as `cos`, which keeps real fields real.
pub fn spectral_shift(grid: &Grid, values: &[Complex64], shift: [f64; 3]) -> Vec<Complex64> {
    let mut out = values.to_vec();
    let n = grid.n();
    apply_multiplier(grid, &mut out, |i| {
        let idx = grid.unravel(i);
        let mut m = Complex64::new(1.0, 0.0);
        for axis in 0..grid.dim() {
            let k = grid.wavenumber(idx[axis]);
            if n % 2 == 0 && idx[axis] == n / 2 {
                m *= Complex64::new((k * shift[axis]).cos(), 0.0);
            } else {
                m *= Complex64::from_polar(1.0, k * shift[axis]);
            }
        }
        m
    });
    out
}
