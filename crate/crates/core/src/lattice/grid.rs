use std::f64::consts::PI;
use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Geometry {
    /// Periodic box; all spectral operators wrap around.
    Torus,
    /// Finite box embedded in free space; convolutions are zero-padded.
    Box,
}

impl fmt::Display for Geometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Geometry::Torus => write!(f, "torus"),
            Geometry::Box => write!(f, "box"),
        }
    }
}

/// Uniform Cartesian grid with `n` points per axis on `[-L/2, L/2)^d`.
///
/// Cells are stored row-major with the first axis slowest. Wave numbers use
/// FFT ordering, so index `n/2` is the unpaired Nyquist mode `-pi n / L`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    dim: usize,
    n: usize,
    length: f64,
    geometry: Geometry,
}

impl Grid {
    pub fn new(dim: usize, n: usize, length: f64, geometry: Geometry) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension must be 1, 2 or 3 (got {dim})")));
        }
        if n < 4 {
            return Err(Error::InvalidGrid(format!("need at least 4 points per axis (got {n})")));
        }
        if !(length > 0.0) || !length.is_finite() {
            return Err(Error::InvalidGrid(format!("box length must be positive (got {length})")));
        }
        Ok(Self { dim, n, length, geometry })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn with_geometry(&self, geometry: Geometry) -> Grid {
        Grid { geometry, ..*self }
    }

    pub fn spacing(&self) -> f64 {
        self.length / self.n as f64
    }

    /// Quadrature weight `h^d`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn volume(&self) -> f64 {
        self.length.powi(self.dim as i32)
    }

    pub fn cells(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn shape(&self) -> Vec<usize> {
        vec![self.n; self.dim]
    }

    /// Position of grid index `i` along any axis.
    pub fn coordinate(&self, i: usize) -> f64 {
        -0.5 * self.length + i as f64 * self.spacing()
    }

    pub fn coordinates(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.coordinate(i)).collect()
    }

    /// Multi-index of a flat cell index; unused axes are zero.
    pub fn unravel(&self, mut flat: usize) -> [usize; 3] {
        let mut idx = [0usize; 3];
        for axis in (0..self.dim).rev() {
            idx[axis] = flat % self.n;
            flat /= self.n;
        }
        idx
    }

    pub fn ravel(&self, idx: [usize; 3]) -> usize {
        (0..self.dim).fold(0, |acc, axis| acc * self.n + idx[axis] % self.n)
    }

    /// Cartesian position of a cell; unused axes are zero.
    pub fn position(&self, flat: usize) -> [f64; 3] {
        let idx = self.unravel(flat);
        let mut x = [0.0; 3];
        for axis in 0..self.dim {
            x[axis] = self.coordinate(idx[axis]);
        }
        x
    }

    /// Signed integer mode number for FFT index `i`: `0, 1, .., n/2-1, -n/2, .., -1`.
    pub fn mode(&self, i: usize) -> i64 {
        let n = self.n as i64;
        let i = i as i64;
        if i < n / 2 {
            i
        } else {
            i - n
        }
    }

    pub fn wavenumber(&self, i: usize) -> f64 {
        2.0 * PI / self.length * self.mode(i) as f64
    }

    /// Wave number usable in first-derivative multipliers (Nyquist zeroed).
    pub fn derivative_wavenumber(&self, i: usize) -> f64 {
        if self.n % 2 == 0 && i == self.n / 2 {
            0.0
        } else {
            self.wavenumber(i)
        }
    }

    pub fn wavevector(&self, flat: usize) -> [f64; 3] {
        let idx = self.unravel(flat);
        let mut k = [0.0; 3];
        for axis in 0..self.dim {
            k[axis] = self.wavenumber(idx[axis]);
        }
        k
    }

    /// `|k|^2` of the Fourier cell at `flat`, Nyquist included.
    pub fn k_squared(&self, flat: usize) -> f64 {
        self.wavevector(flat).iter().map(|k| k * k).sum()
    }

    /// Minimum-image offset between two cells along one axis, in units of cells.
    pub fn periodic_offset(&self, a: usize, b: usize) -> i64 {
        let n = self.n as i64;
        let d = (a as i64 - b as i64).rem_euclid(n);
        if d >= n / 2 {
            d - n
        } else {
            d
        }
    }

    pub fn same_lattice(&self, other: &Grid) -> bool {
        self.dim == other.dim && self.n == other.n && (self.length - other.length).abs() <= 1e-12 * self.length
    }

    pub fn check_same(&self, other: &Grid) -> Result<()> {
        if self.same_lattice(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "({}d, n={}, L={}) vs ({}d, n={}, L={})",
                self.dim, self.n, self.length, other.dim, other.n, other.length
            )))
        }
    }
}

/// Builds a grid after validating its parameters.
pub fn make_grid(dim: usize, n: usize, length: f64, geometry: Geometry) -> Result<Grid> {
    Grid::new(dim, n, length, geometry)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_torus() {
        let g = make_grid(1, 64, 2.0 * PI, Geometry::Torus).unwrap();
        assert!((g.spacing() - 2.0 * PI / 64.0).abs() < 1e-15);
        let modes: Vec<i64> = (0..64).map(|i| g.mode(i)).collect();
        assert_eq!(*modes.iter().min().unwrap(), -32);
        assert_eq!(*modes.iter().max().unwrap(), 31);
        assert!((g.wavenumber(1) - 1.0).abs() < 1e-14);
        assert_eq!(g.derivative_wavenumber(32), 0.0);
        assert!((g.spacing() * g.n() as f64 - g.length()).abs() < 1e-15);
    }

    #[test]
    fn cell_count_3d() {
        let g = make_grid(3, 16, 1.0, Geometry::Torus).unwrap();
        assert_eq!(g.cells(), 4096);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(make_grid(1, 3, 1.0, Geometry::Torus).is_err());
        assert!(make_grid(1, 8, 0.0, Geometry::Torus).is_err());
        assert!(make_grid(1, 8, -1.0, Geometry::Box).is_err());
        assert!(make_grid(4, 8, 1.0, Geometry::Box).is_err());
    }

    #[test]
    fn ravel_roundtrip() {
        let g = make_grid(3, 5, 1.0, Geometry::Torus).unwrap();
        for flat in 0..g.cells() {
            assert_eq!(g.ravel(g.unravel(flat)), flat);
        }
    }
}
