use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;

use super::fft::{fft_nd, ifft_nd};
use super::field::Field;
use super::grid::{Geometry, Grid};
use crate::error::{Error, Result};

/// Default softening length for 1D/2D interactions.
pub const DEFAULT_SOFTENING: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PotentialKind {
    Coulomb3d,
    SoftCoulomb { a: f64 },
    Gaussian { sigma: f64, amplitude: f64 },
    Zero,
}

/// Radial pair interaction with a sign and an overall coupling scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Potential {
    pub kind: PotentialKind,
    pub sign: f64,
    pub scale: f64,
}

impl fmt::Display for Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = if self.sign < 0.0 { "-" } else { "" };
        match self.kind {
            PotentialKind::Coulomb3d => write!(f, "{s}coulomb3d"),
            PotentialKind::SoftCoulomb { a } => write!(f, "{s}soft-coulomb(a={a})"),
            PotentialKind::Gaussian { sigma, amplitude } => write!(f, "{s}gaussian(sigma={sigma}, A={amplitude})"),
            PotentialKind::Zero => write!(f, "zero"),
        }?;
        if self.scale != 1.0 {
            write!(f, " x{}", self.scale)?;
        }
        Ok(())
    }
}

impl Potential {
    fn with_kind(kind: PotentialKind) -> Self {
        Self { kind, sign: 1.0, scale: 1.0 }
    }

    pub fn coulomb3d() -> Self {
        Self::with_kind(PotentialKind::Coulomb3d)
    }

    pub fn soft_coulomb(a: f64) -> Result<Self> {
        if !(a > 0.0) {
            return Err(Error::InvalidArgument(format!("soft-coulomb needs a > 0 (got {a})")));
        }
        Ok(Self::with_kind(PotentialKind::SoftCoulomb { a }))
    }

    pub fn gaussian(sigma: f64, amplitude: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::InvalidArgument(format!("gaussian needs sigma > 0 (got {sigma})")));
        }
        Ok(Self::with_kind(PotentialKind::Gaussian { sigma, amplitude }))
    }

    pub fn zero() -> Self {
        Self::with_kind(PotentialKind::Zero)
    }

    pub fn with_sign(mut self, sign: f64) -> Result<Self> {
        if sign != 1.0 && sign != -1.0 {
            return Err(Error::InvalidArgument(format!("sign must be +1 or -1 (got {sign})")));
        }
        self.sign = sign;
        Ok(self)
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        self.scale *= factor;
        self
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, PotentialKind::Zero) || self.scale == 0.0
    }

    fn prefactor(&self) -> f64 {
        self.sign * self.scale
    }

    /// Real-space value at distance `r` (Coulomb is infinite at 0).
    pub fn value(&self, r: f64) -> f64 {
        let base = match self.kind {
            PotentialKind::Coulomb3d => 1.0 / r,
            PotentialKind::SoftCoulomb { a } => 1.0 / (r * r + a * a).sqrt(),
            PotentialKind::Gaussian { sigma, amplitude } => amplitude * (-r * r / (2.0 * sigma * sigma)).exp(),
            PotentialKind::Zero => 0.0,
        };
        self.prefactor() * base
    }

    /// Closed-form continuous Fourier transform, where one exists.
    pub fn fourier(&self, k2: f64, dim: usize) -> Option<f64> {
        let base = match self.kind {
            PotentialKind::Coulomb3d => {
                if k2 == 0.0 {
                    0.0
                } else {
                    4.0 * PI / k2
                }
            }
            PotentialKind::Gaussian { sigma, amplitude } => {
                amplitude * (2.0 * PI * sigma * sigma).powf(dim as f64 / 2.0) * (-0.5 * sigma * sigma * k2).exp()
            }
            PotentialKind::Zero => 0.0,
            PotentialKind::SoftCoulomb { .. } => return None,
        };
        Some(self.prefactor() * base)
    }

    /// Value at the minimum-image separation of two cells on a torus grid.
    pub fn pair_value(&self, grid: &Grid, a: usize, b: usize) -> f64 {
        let ia = grid.unravel(a);
        let ib = grid.unravel(b);
        let h = grid.spacing();
        let mut r2 = 0.0;
        for axis in 0..grid.dim() {
            let d = match grid.geometry() {
                Geometry::Torus => grid.periodic_offset(ia[axis], ib[axis]) as f64,
                Geometry::Box => ia[axis] as f64 - ib[axis] as f64,
            } * h;
            r2 += d * d;
        }
        self.value(r2.sqrt())
    }
}

/// Cached Fourier multiplier for repeated convolutions with one potential.
#[derive(Debug, Clone)]
pub struct Convolver {
    grid: Grid,
    potential: Potential,
    padded: usize,
    multiplier: Vec<f64>,
}

fn sampled_multiplier(dim: usize, size: usize, h: f64, radial: impl Fn(f64) -> f64) -> Vec<f64> {
    let total = size.pow(dim as u32);
    let offset = |j: usize| -> f64 {
        let m = if j < size / 2 { j as i64 } else { j as i64 - size as i64 };
        m as f64 * h
    };
    let mut kernel: Vec<Complex64> = (0..total)
        .map(|flat| {
            let mut f = flat;
            let mut r2 = 0.0;
            for _ in 0..dim {
                let x = offset(f % size);
                r2 += x * x;
                f /= size;
            }
            Complex64::new(radial(r2.sqrt()), 0.0)
        })
        .collect();
    fft_nd(&mut kernel, &vec![size; dim]);
    let w = h.powi(dim as i32);
    kernel.iter().map(|c| c.re * w).collect()
}

fn analytic_multiplier(dim: usize, size: usize, length: f64, f: impl Fn(f64) -> f64) -> Vec<f64> {
    let total = size.pow(dim as u32);
    let dk = 2.0 * PI / length;
    (0..total)
        .map(|flat| {
            let mut rem = flat;
            let mut k2 = 0.0;
            for _ in 0..dim {
                let j = rem % size;
                rem /= size;
                let m = if j < size / 2 { j as i64 } else { j as i64 - size as i64 };
                let k = m as f64 * dk;
                k2 += k * k;
            }
            f(k2)
        })
        .collect()
}

impl Convolver {
    pub fn new(grid: &Grid, potential: &Potential) -> Result<Self> {
        let dim = grid.dim();
        let n = grid.n();
        let h = grid.spacing();
        if matches!(potential.kind, PotentialKind::Coulomb3d) && dim != 3 {
            return Err(Error::Unsupported(format!(
                "coulomb3d interaction needs d = 3 (grid has d = {dim}); use soft-coulomb"
            )));
        }
        let pre = potential.prefactor();
        let (padded, multiplier) = if potential.is_zero() {
            (n, vec![0.0; grid.cells()])
        } else {
            match (grid.geometry(), potential.kind) {
                (Geometry::Torus, PotentialKind::SoftCoulomb { a }) => {
                    (n, sampled_multiplier(dim, n, h, |r| pre / (r * r + a * a).sqrt()))
                }
                (Geometry::Torus, _) => {
                    let p = *potential;
                    (n, analytic_multiplier(dim, n, grid.length(), |k2| p.fourier(k2, dim).unwrap_or(0.0)))
                }
                (Geometry::Box, PotentialKind::Coulomb3d) => {
                    // Truncated kernel: exact for sources and targets inside the box.
                    let size = 3 * n;
                    let radius = 3f64.sqrt() * grid.length();
                    let mult = analytic_multiplier(dim, size, size as f64 * h, |k2| {
                        if k2 == 0.0 {
                            pre * 2.0 * PI * radius * radius
                        } else {
                            let k = k2.sqrt();
                            pre * 4.0 * PI * (1.0 - (radius * k).cos()) / k2
                        }
                    });
                    (size, mult)
                }
                (Geometry::Box, _) => {
                    let p = *potential;
                    (2 * n, sampled_multiplier(dim, 2 * n, h, |r| p.value(r)))
                }
            }
        };
        Ok(Self { grid: *grid, potential: *potential, padded, multiplier })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }

    pub fn is_zero(&self) -> bool {
        self.potential.is_zero()
    }

    /// Fourier multiplier on the (possibly padded) transform lattice.
    pub fn multiplier(&self) -> &[f64] {
        &self.multiplier
    }

    /// `V * g` for an arbitrary complex grid function.
    pub fn apply(&self, values: &[Complex64]) -> Vec<Complex64> {
        let n = self.grid.n();
        let dim = self.grid.dim();
        if self.is_zero() {
            return vec![Complex64::new(0.0, 0.0); values.len()];
        }
        if self.padded == n {
            let mut buf = values.to_vec();
            let shape = self.grid.shape();
            fft_nd(&mut buf, &shape);
            for (v, m) in buf.iter_mut().zip(&self.multiplier) {
                *v *= m;
            }
            ifft_nd(&mut buf, &shape);
            return buf;
        }
        let p = self.padded;
        let shape = vec![p; dim];
        let mut buf = vec![Complex64::new(0.0, 0.0); p.pow(dim as u32)];
        let embed = |flat: usize| -> usize {
            let idx = self.grid.unravel(flat);
            (0..dim).fold(0, |acc, a| acc * p + idx[a])
        };
        for (flat, v) in values.iter().enumerate() {
            buf[embed(flat)] = *v;
        }
        fft_nd(&mut buf, &shape);
        for (v, m) in buf.iter_mut().zip(&self.multiplier) {
            *v *= m;
        }
        ifft_nd(&mut buf, &shape);
        (0..values.len()).map(|flat| buf[embed(flat)]).collect()
    }

    /// `V * rho` for a real density.
    pub fn apply_real(&self, density: &[f64]) -> Vec<f64> {
        let c: Vec<Complex64> = density.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.apply(&c).into_iter().map(|v| v.re).collect()
    }
}

/// `V * rho` with the imaginary part of the input checked and discarded.
pub fn convolve(potential: &Potential, density: &Field) -> Result<Field> {
    let norm = density.norm();
    let imag: f64 = density.values.iter().map(|v| v.im * v.im).sum::<f64>() * density.grid.cell_volume();
    if imag.sqrt() > 1e-12 * norm.max(f64::MIN_POSITIVE) {
        return Err(Error::InvalidArgument("density has a non-negligible imaginary part".into()));
    }
    let conv = Convolver::new(&density.grid, potential)?;
    let re: Vec<f64> = density.values.iter().map(|v| v.re).collect();
    Field::from_real(density.grid, &conv.apply_real(&re))
}

/// Separable confining potential `sum_i (a x_i^2 + b x_i^4)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ExternalPotential {
    pub quadratic: f64,
    pub quartic: f64,
}

impl ExternalPotential {
    pub fn new(quadratic: f64, quartic: f64) -> Self {
        Self { quadratic, quartic }
    }

    pub fn harmonic(quadratic: f64) -> Self {
        Self { quadratic, quartic: 0.0 }
    }

    pub fn is_zero(&self) -> bool {
        self.quadratic == 0.0 && self.quartic == 0.0
    }

    pub fn axis_value(&self, x: f64) -> f64 {
        let x2 = x * x;
        self.quadratic * x2 + self.quartic * x2 * x2
    }

    pub fn axis_derivative(&self, x: f64) -> f64 {
        2.0 * self.quadratic * x + 4.0 * self.quartic * x * x * x
    }

    pub fn value(&self, x: [f64; 3], dim: usize) -> f64 {
        (0..dim).map(|a| self.axis_value(x[a])).sum()
    }

    pub fn sample(&self, grid: &Grid) -> Vec<f64> {
        (0..grid.cells()).map(|i| self.value(grid.position(i), grid.dim())).collect()
    }
}

/// Particle number and semiclassical parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingParams {
    pub n_particles: usize,
    pub eps: f64,
}

impl ScalingParams {
    pub fn new(n_particles: usize, eps: f64) -> Result<Self> {
        if n_particles == 0 {
            return Err(Error::InvalidArgument("N must be positive".into()));
        }
        if !(eps > 0.0) {
            return Err(Error::InvalidArgument(format!("epsilon must be positive (got {eps})")));
        }
        Ok(Self { n_particles, eps })
    }

    /// `eps = N^(-1/d)`.
    pub fn default_for(n_particles: usize, dim: usize) -> Result<Self> {
        Self::new(n_particles, (n_particles as f64).powf(-1.0 / dim as f64))
    }

    pub fn coupling(&self) -> f64 {
        1.0 / self.n_particles as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::grid::make_grid;

    #[test]
    fn zero_density_gives_zero() {
        let g = make_grid(3, 8, 1.0, Geometry::Torus).unwrap();
        let out = convolve(&Potential::coulomb3d(), &Field::zeros(g)).unwrap();
        assert!(out.values.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn coulomb_rejected_below_3d() {
        let g = make_grid(1, 8, 1.0, Geometry::Torus).unwrap();
        assert!(convolve(&Potential::coulomb3d(), &Field::zeros(g)).is_err());
    }

    #[test]
    fn complex_density_rejected() {
        let g = make_grid(1, 8, 1.0, Geometry::Torus).unwrap();
        let f = Field::from_fn(g, |_| Complex64::new(1.0, 0.5));
        assert!(convolve(&Potential::soft_coulomb(0.1).unwrap(), &f).is_err());
    }

    #[test]
    fn soft_coulomb_spike_matches_kernel() {
        let g = make_grid(1, 128, 8.0, Geometry::Torus).unwrap();
        let a = 0.3;
        let m = 2.5;
        let h = g.spacing();
        let src = 64;
        let mut rho = vec![0.0; 128];
        rho[src] = m / h;
        let out = convolve(&Potential::soft_coulomb(a).unwrap(), &Field::from_real(g, &rho).unwrap()).unwrap();
        for i in 0..128 {
            let x = g.periodic_offset(i, src) as f64 * h;
            let expect = m / (x * x + a * a).sqrt();
            assert!((out.values[i].re - expect).abs() <= 2.0 * h / a * expect);
        }
    }

    #[test]
    fn sign_flips_output() {
        let g = make_grid(1, 16, 4.0, Geometry::Torus).unwrap();
        let rho: Vec<f64> = (0..16).map(|i| (i as f64 * 0.3).sin().abs()).collect();
        let f = Field::from_real(g, &rho).unwrap();
        let p = Potential::gaussian(0.4, 1.0).unwrap();
        let a = convolve(&p, &f).unwrap();
        let b = convolve(&p.with_sign(-1.0).unwrap(), &f).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x + y).norm() < 1e-14);
        }
    }
}
