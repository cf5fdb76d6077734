//! Wigner transform of one-dimensional orbital sets.
//!
//! `W(x, v) = int dy omega(x + eps y/2; x - eps y/2) exp(-i v y)`, so a plane
//! wave `exp(i k x)` sits at `v = eps k`. With this convention
//! `(2 pi)^-1 int W dv = rho_raw(x)` and `int int W dx dv = 2 pi N`.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::{fft, spectral_shift, Field, Geometry, Grid};
use crate::linalg::ZERO;
use crate::slater::OrbitalSet;

/// Real phase-space density on a position grid times a uniform velocity grid.
#[derive(Debug, Clone, PartialEq)]
pub struct WignerField {
    pub grid: Grid,
    /// Ascending, uniformly spaced velocities.
    pub velocities: Vec<f64>,
    /// Row-major `[x][v]`.
    pub values: Vec<f64>,
}

impl WignerField {
    pub fn nv(&self) -> usize {
        self.velocities.len()
    }

    pub fn dv(&self) -> f64 {
        self.velocities[1] - self.velocities[0]
    }

    pub fn at(&self, ix: usize, iv: usize) -> f64 {
        self.values[ix * self.nv() + iv]
    }

    /// `(2 pi)^-1 sum_v W dv` per position.
    pub fn position_marginal(&self) -> Vec<f64> {
        let nv = self.nv();
        let c = self.dv() / (2.0 * std::f64::consts::PI);
        self.values.chunks(nv).map(|row| row.iter().sum::<f64>() * c).collect()
    }

    /// `(2 pi)^-1 sum_x W h` per velocity.
    pub fn velocity_marginal(&self) -> Vec<f64> {
        let nv = self.nv();
        let c = self.grid.spacing() / (2.0 * std::f64::consts::PI);
        let mut out = vec![0.0; nv];
        for row in self.values.chunks(nv) {
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * c;
            }
        }
        out
    }

    /// `sum W h dv`.
    pub fn total(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.spacing() * self.dv()
    }

    pub fn same_phase_grid(&self, other: &WignerField) -> bool {
        self.grid.same_lattice(&other.grid)
            && self.nv() == other.nv()
            && self.velocities.iter().zip(&other.velocities).all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + a.abs()))
    }

    /// Discrete `L^p` phase-space norm, `p` in `{1, 2}` typically.
    pub fn norm(&self, p: f64) -> f64 {
        let w = self.grid.spacing() * self.dv();
        (self.values.iter().map(|v| v.abs().powf(p)).sum::<f64>() * w).powf(1.0 / p)
    }
}

/// Velocity bound `eps pi n / L` covered by the natural velocity lattice.
pub fn natural_vmax(grid: &Grid, eps: f64) -> f64 {
    eps * std::f64::consts::PI * grid.n() as f64 / grid.length()
}

/// Which point separations `|x - x'|` enter the `y` integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WignerRange {
    /// All separations up to `L`. Marginals are exact, but a packet of width
    /// much less than `L` acquires an image at `x + L/2` with sign `(-1)^l`.
    Full,
    /// Separations below `L/2`, free of images for states localized in
    /// less than half the torus.
    #[default]
    Local,
}

/// Wigner transform with `nv` velocity points over the full separation range;
/// `nv = 2n` is the natural lattice, larger powers-of-two multiples refine it
/// by zero-padding in `y`.
pub fn wigner_transform(set: &OrbitalSet, nv: Option<usize>) -> Result<WignerField> {
    wigner_transform_range(set, nv, WignerRange::Full)
}

pub fn wigner_transform_range(set: &OrbitalSet, nv: Option<usize>, range: WignerRange) -> Result<WignerField> {
    let grid = set.grid;
    if grid.dim() != 1 {
        return Err(Error::Unsupported("the Wigner transform is implemented for d = 1".into()));
    }
    if grid.geometry() != Geometry::Torus {
        return Err(Error::Unsupported("the Wigner transform needs a torus grid".into()));
    }
    let n = grid.n();
    if n % 2 != 0 {
        return Err(Error::InvalidGrid("the Wigner transform needs an even number of points".into()));
    }
    let nv = nv.unwrap_or(2 * n);
    if nv < 2 * n || nv % (2 * n) != 0 || !(nv / (2 * n)).is_power_of_two() {
        return Err(Error::InvalidArgument(format!("nv must be 2n times a power of two (n = {n}, nv = {nv})")));
    }
    check_bandwidth(set)?;
    let h = grid.spacing();
    let eps = set.eps;
    let shifted: Vec<Vec<Complex64>> =
        set.orbitals.iter().map(|f| spectral_shift(&grid, f, [0.5 * h, 0.0, 0.0])).collect();
    let dy = h / eps;
    let rows: Vec<(Vec<f64>, f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut buf = vec![ZERO; nv];
            let idx = |k: i64| k.rem_euclid(n as i64) as usize;
            let (lo, hi) = match range {
                WignerRange::Full => (-(n as i64), n as i64 - 1),
                WignerRange::Local => (1 - (n / 2) as i64, (n / 2) as i64 - 1),
            };
            for m in lo..=hi {
                let mut c = ZERO;
                for (f, fs) in set.orbitals.iter().zip(&shifted) {
                    let (plus, minus) = if m % 2 == 0 {
                        (f[idx(i as i64 + m / 2)], f[idx(i as i64 - m / 2)])
                    } else {
                        (fs[idx(i as i64 + (m - 1) / 2)], fs[idx(i as i64 - (m + 1) / 2)])
                    };
                    c += plus * minus.conj();
                }
                let q = m.rem_euclid(nv as i64) as usize;
                buf[q] = c * dy;
            }
            if nv > 2 * n && range == WignerRange::Full {
                // The end sample m = -n is shared with m = +n once the period is broken.
                let q = (-(n as i64)).rem_euclid(nv as i64) as usize;
                buf[q] *= 0.5;
                buf[n] = buf[q];
            }
            fft::fft_nd(&mut buf, &[nv]);
            let mut row = vec![0.0; nv];
            let mut max_re = 0.0f64;
            let mut max_im = 0.0f64;
            for (l, v) in buf.iter().enumerate() {
                let pos = (l + nv / 2) % nv;
                row[pos] = v.re;
                max_re = max_re.max(v.re.abs());
                max_im = max_im.max(v.im.abs());
            }
            (row, max_re, max_im)
        })
        .collect();
    let max_re = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let max_im = rows.iter().map(|r| r.2).fold(0.0, f64::max);
    if max_im > 1e-10 * max_re.max(f64::MIN_POSITIVE) {
        return Err(Error::Guard(format!("Wigner transform has imaginary part {max_im:.3e}")));
    }
    let values: Vec<f64> = rows.into_iter().flat_map(|r| r.0).collect();
    let dv = 2.0 * std::f64::consts::PI / (nv as f64 * dy);
    let velocities = (0..nv).map(|l| (l as f64 - (nv / 2) as f64) * dv).collect();
    Ok(WignerField { grid, velocities, values })
}

/// Rejects orbitals with spectral weight in the outer eighth of the band.
fn check_bandwidth(set: &OrbitalSet) -> Result<()> {
    let grid = set.grid;
    let n = grid.n() as i64;
    let cut = n / 2 - n / 16;
    let mut outer = 0.0;
    let mut total = 0.0;
    for j in 0..set.len() {
        let c = Field { grid, values: set.orbitals[j].clone() }.fourier();
        for (i, v) in c.iter().enumerate() {
            let p = v.norm_sqr();
            total += p;
            if grid.mode(i).abs() >= cut {
                outer += p;
            }
        }
    }
    if outer > 1e-12 * total {
        return Err(Error::Guard(format!(
            "orbitals carry relative spectral weight {:.3e} near the velocity cutoff {:.4}: the Wigner transform would alias",
            outer / total,
            natural_vmax(&grid, set.eps)
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::make_grid;

    #[test]
    fn plane_wave_sits_at_eps_k() {
        let g = make_grid(1, 32, 2.0 * std::f64::consts::PI, Geometry::Torus).unwrap();
        let eps = 0.5;
        let amp = 1.0 / g.length().sqrt();
        let f: Vec<Complex64> = g.coordinates().iter().map(|&x| Complex64::from_polar(amp, 3.0 * x)).collect();
        let set = OrbitalSet::new(g, eps, vec![f]).unwrap();
        let w = wigner_transform(&set, None).unwrap();
        let nv = w.nv();
        for ix in 0..32 {
            let (best, _) = (0..nv).map(|l| (l, w.at(ix, l))).fold((0, f64::MIN), |a, b| if b.1 > a.1 { b } else { a });
            assert!((w.velocities[best] - 1.5).abs() < 1e-12);
        }
        for (r, m) in set.density().iter().zip(w.position_marginal()) {
            assert!((r - m).abs() < 1e-10);
        }
    }
}
