use std::f64::consts::PI;

use fermimf_core::diagnostics::{
    abs_density, assumption_scan, commutator_spectrum, maximal_function, tr1_bound_check, ScanWeight, Tr1Checker,
    Weight,
};
use fermimf_core::lattice::{make_grid, ExternalPotential, Geometry, Grid};
use fermimf_core::slater::{fermi_sea, trapped_ground, OrbitalSet};
use fermimf_core::Complex64;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_set(grid: Grid, n: usize, eps: f64, seed: u64) -> OrbitalSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let orbs = (0..n)
        .map(|_| {
            (0..grid.cells()).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
        })
        .collect();
    let mut set = OrbitalSet::new(grid, eps, orbs).unwrap();
    set.reorthonormalize().unwrap();
    set
}

/// `omega` in the orthonormal basis `e_x / sqrt(h^d)`.
fn dense_omega(set: &OrbitalSet) -> DMatrix<Complex64> {
    let m = set.grid.cells();
    let w = set.grid.cell_volume();
    DMatrix::from_fn(m, m, |a, b| set.orbitals.iter().map(|f| f[a] * f[b].conj()).sum::<Complex64>() * w)
}

/// `eps d/dx` on a 1D torus, Nyquist mode dropped.
fn dense_gradient(grid: &Grid, eps: f64) -> DMatrix<Complex64> {
    let n = grid.n();
    let kappa = 2.0 * PI / grid.length();
    DMatrix::from_fn(n, n, |a, b| {
        let mut s = Complex64::new(0.0, 0.0);
        for m in -(n as i64) / 2 + 1..(n as i64) / 2 {
            let k = kappa * m as f64;
            s += Complex64::new(0.0, k) * Complex64::from_polar(1.0, k * (a as f64 - b as f64) * grid.spacing());
        }
        s * eps / n as f64
    })
}

fn dense_commutator(set: &OrbitalSet, weight: &Weight) -> DMatrix<Complex64> {
    let om = dense_omega(set);
    let g = set.grid;
    let w = match *weight {
        Weight::Gradient { .. } => dense_gradient(&g, set.eps),
        Weight::Position { axis } => {
            DMatrix::from_fn(g.cells(), g.cells(), |a, b| if a == b { Complex64::new(g.position(a)[axis], 0.0) } else { Complex64::new(0.0, 0.0) })
        }
        Weight::Gaussian { r, z } => DMatrix::from_fn(g.cells(), g.cells(), |a, b| {
            if a != b {
                return Complex64::new(0.0, 0.0);
            }
            let x = g.position(a);
            let mut d2 = 0.0;
            for k in 0..g.dim() {
                let mut d = x[k] - z[k];
                if g.geometry() == Geometry::Torus {
                    d -= g.length() * (d / g.length()).round();
                }
                d2 += d * d;
            }
            Complex64::new((-d2 / (r * r)).exp(), 0.0)
        }),
    };
    &w * &om - &om * &w
}

fn dense_singular_values(m: &DMatrix<Complex64>) -> Vec<f64> {
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

fn check_against_dense(set: &OrbitalSet, weight: Weight) {
    let spec = commutator_spectrum(set, &weight).unwrap();
    let dense = dense_singular_values(&dense_commutator(set, &weight));
    let scale = dense[0].max(1.0);
    assert_eq!(spec.values.len(), 2 * set.len());
    for (k, s) in dense.iter().enumerate() {
        let low = spec.values.get(k).copied().unwrap_or(0.0);
        assert!((low - s).abs() <= 1e-9 * scale, "{weight}: sigma_{k} {low} vs dense {s}");
    }
}

#[test]
fn low_rank_matches_dense_svd() {
    let g1 = make_grid(1, 64, 6.0, Geometry::Torus).unwrap();
    let g2 = make_grid(2, 10, 5.0, Geometry::Box).unwrap();
    for (k, n) in [1usize, 3, 8].iter().enumerate() {
        let set = random_set(g1, *n, 0.3, 100 + k as u64);
        check_against_dense(&set, Weight::Position { axis: 0 });
        check_against_dense(&set, Weight::Gradient { axis: 0 });
        check_against_dense(&set, Weight::Gaussian { r: 0.8, z: [1.0, 0.0, 0.0] });
        let set2 = random_set(g2, *n, 0.3, 200 + k as u64);
        check_against_dense(&set2, Weight::Position { axis: 1 });
        check_against_dense(&set2, Weight::Gaussian { r: 1.2, z: [0.5, -1.0, 0.0] });
    }
    let trap = ExternalPotential::harmonic(1.0);
    let g = make_grid(1, 128, 10.0, Geometry::Torus).unwrap();
    let set = trapped_ground(&g, 6, &trap, 0.2).unwrap();
    check_against_dense(&set, Weight::Position { axis: 0 });
    check_against_dense(&set, Weight::Gradient { axis: 0 });
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn random_sets_match_dense_svd(seed in any::<u64>(), n in 1usize..=8) {
        let g = make_grid(1, 48, 4.0, Geometry::Torus).unwrap();
        let set = random_set(g, n, 0.5, seed);
        check_against_dense(&set, Weight::Position { axis: 0 });
        check_against_dense(&set, Weight::Gradient { axis: 0 });
    }
}

fn gaussian_set(grid: Grid, sigma: f64, eps: f64) -> OrbitalSet {
    let c = (PI * sigma * sigma).powf(-0.25);
    let f = (0..grid.cells())
        .map(|i| {
            let x = grid.position(i)[0];
            Complex64::new(c * (-x * x / (2.0 * sigma * sigma)).exp(), 0.0)
        })
        .collect();
    OrbitalSet::new(grid, eps, vec![f]).unwrap()
}

#[test]
fn single_gaussian_trace_norm() {
    for sigma in [0.5, 1.0, 1.5] {
        let g = make_grid(1, 256, 24.0 * sigma, Geometry::Torus).unwrap();
        let set = gaussian_set(g, sigma, 0.1);
        let tr = commutator_spectrum(&set, &Weight::Position { axis: 0 }).unwrap().trace_norm();
        let exact = 2f64.sqrt() * sigma;
        assert!((tr - exact).abs() <= 1e-6 * exact, "sigma {sigma}: {tr} vs {exact}");
        let b = make_grid(1, 256, 24.0 * sigma, Geometry::Box).unwrap();
        let tr = commutator_spectrum(&gaussian_set(b, sigma, 0.1), &Weight::Position { axis: 0 }).unwrap().trace_norm();
        assert!((tr - exact).abs() <= 1e-6 * exact);
    }
}

#[test]
fn abs_density_is_diagonal_of_abs_operator() {
    let g = make_grid(1, 64, 6.0, Geometry::Torus).unwrap();
    let set = random_set(g, 4, 0.4, 9);
    for weight in [Weight::Position { axis: 0 }, Weight::Gradient { axis: 0 }] {
        let spec = commutator_spectrum(&set, &weight).unwrap();
        let dens = abs_density(&spec);
        assert!((dens.l1() - spec.trace_norm()).abs() <= 1e-10 * spec.trace_norm());
        let a = dense_commutator(&set, &weight);
        let svd = a.clone().svd(true, true);
        let v_t = svd.v_t.unwrap();
        let h = g.cell_volume();
        for x in 0..g.cells() {
            let diag: f64 = (0..svd.singular_values.len())
                .map(|k| svd.singular_values[k] * v_t[(k, x)].norm_sqr())
                .sum();
            assert!((dens.values[x] - diag / h).abs() <= 1e-9 * (1.0 + diag / h), "{weight} at {x}");
        }
    }
}

#[test]
fn gradient_commutes_with_translation_invariant_states() {
    let g = make_grid(1, 32, 2.0 * PI, Geometry::Torus).unwrap();
    let full = fermi_sea(&g, 32, 0.2).unwrap();
    let spec = commutator_spectrum(&full.orbitals, &Weight::Gradient { axis: 0 }).unwrap();
    assert!(spec.values.iter().all(|s| *s <= 1e-10));
    let g3 = make_grid(3, 8, 2.0 * PI, Geometry::Torus).unwrap();
    for n in [7, 19, 27] {
        let eps = (n as f64).powf(-1.0 / 3.0);
        let sea = fermi_sea(&g3, n, eps).unwrap();
        let table = assumption_scan(&[(0.0, sea.orbitals)], ScanWeight::Gradient, 6.0, false).unwrap();
        assert!(table.sup_ratio <= 1e-10, "N = {n}: {}", table.sup_ratio);
        assert_eq!(table.rows.len(), 3);
    }
}

/// Quadrature of the analytic single-Gaussian commutator densities.
fn analytic_gaussian_norms(sigma: f64, amp: f64, p: f64) -> (f64, f64) {
    let c2 = 1.0 / (PI.sqrt() * sigma);
    let rho = |x: f64| {
        let f2 = c2 * (-x * x / (sigma * sigma)).exp();
        f2 * (1.0 + 2.0 * x * x / (sigma * sigma))
    };
    let n = 20000;
    let lim = 12.0 * sigma;
    let dx = 2.0 * lim / n as f64;
    let mut l1 = 0.0;
    let mut lp = 0.0;
    for i in 0..=n {
        let x = -lim + i as f64 * dx;
        let w = if i == 0 || i == n { 0.5 } else { 1.0 };
        let r = amp * rho(x);
        l1 += w * r * dx;
        lp += w * r.powf(p) * dx;
    }
    (l1, lp.powf(1.0 / p))
}

#[test]
fn gaussian_family_scan_follows_analytic_law() {
    let p = 6.0;
    let mut per_eps = Vec::new();
    for eps in [0.2, 0.1, 0.05] {
        let sigma = eps;
        let g = make_grid(1, 256, 40.0 * sigma, Geometry::Torus).unwrap();
        let set = gaussian_set(g, sigma, eps);
        let snaps = vec![(0.0, set)];
        let pos = assumption_scan(&snaps, ScanWeight::Position, p, false).unwrap();
        let (l1, lp) = analytic_gaussian_norms(sigma, sigma / 2f64.sqrt(), p);
        assert!((pos.rows[0].l1 - l1).abs() <= 1e-3 * l1);
        assert!((pos.rows[0].lp - lp).abs() <= 1e-3 * lp);
        let grad = assumption_scan(&snaps, ScanWeight::Gradient, p, false).unwrap();
        let (l1, lp) = analytic_gaussian_norms(sigma, eps / (sigma * 2f64.sqrt()), p);
        assert!((grad.rows[0].l1 - l1).abs() <= 1e-3 * l1);
        assert!((grad.rows[0].lp - lp).abs() <= 1e-3 * lp);
        per_eps.push(pos.rows[0].l1 / eps);
    }
    // With width proportional to eps, the position-weight L^1 norm is linear in eps.
    for r in &per_eps {
        assert!((r - 2f64.sqrt()).abs() <= 1e-3 * 2f64.sqrt());
    }
}

fn brute_maximal(grid: &Grid, rho: &[f64]) -> Vec<f64> {
    let dim = grid.dim();
    let n = grid.n() as i64;
    let periodic = grid.geometry() == Geometry::Torus;
    let at = |idx: [i64; 3]| -> f64 {
        let mut c = [0usize; 3];
        for a in 0..dim {
            if periodic {
                c[a] = idx[a].rem_euclid(n) as usize;
            } else if idx[a] < 0 || idx[a] >= n {
                return 0.0;
            } else {
                c[a] = idx[a] as usize;
            }
        }
        rho[grid.ravel(c)]
    };
    let span = |k: i64, a: usize| if a < dim { -k..=k } else { 0..=0 };
    let centers = |i: usize| -> Vec<[i64; 3]> {
        let idx = grid.unravel(i);
        let mut out = Vec::new();
        for d0 in span(1, 0) {
            for d1 in span(1, 1) {
                for d2 in span(1, 2) {
                    let c = [idx[0] as i64 + d0, idx[1] as i64 + d1, idx[2] as i64 + d2];
                    if !periodic && (0..dim).any(|a| c[a] < 0 || c[a] >= n) {
                        continue;
                    }
                    out.push(c);
                }
            }
        }
        out
    };
    (0..grid.cells())
        .map(|i| {
            let mut best = rho[i];
            for c in centers(i) {
                for k in 0..=n / 2 {
                    let mut sum = 0.0;
                    let mut count = 0.0;
                    for a in span(k, 0) {
                        for b in span(k, 1) {
                            for d in span(k, 2) {
                                if a * a + b * b + d * d <= k * k {
                                    sum += at([c[0] + a, c[1] + b, c[2] + d]);
                                    count += 1.0;
                                }
                            }
                        }
                    }
                    best = best.max(sum / count);
                }
            }
            best
        })
        .collect()
}

#[test]
fn maximal_function_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (dim, n, geom) in [(1, 16, Geometry::Box), (1, 16, Geometry::Torus), (2, 8, Geometry::Torus), (2, 8, Geometry::Box), (3, 4, Geometry::Box)] {
        let g = make_grid(dim, n, 2.0, geom).unwrap();
        let rho: Vec<f64> = (0..g.cells()).map(|_| rng.random_range(0.0f64..1.0).powi(4)).collect();
        let fast = maximal_function(&g, &rho).unwrap();
        let slow = brute_maximal(&g, &rho);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() <= 1e-12, "{dim}D {geom:?}: {a} vs {b}");
            assert!(*a >= 0.0);
        }
    }
    let g = make_grid(1, 8, 1.0, Geometry::Torus).unwrap();
    assert!(maximal_function(&g, &[-1.0; 8]).is_err());
    assert!(maximal_function(&g, &[1.0; 4]).is_err());
}

#[test]
fn trace_norm_bound_is_finite_and_positive() {
    let g = make_grid(3, 12, 6.0, Geometry::Box).unwrap();
    let set = trapped_ground(&g, 4, &ExternalPotential::harmonic(1.0), 0.4).unwrap();
    let checker = Tr1Checker::new(&set).unwrap();
    let mut ratios = Vec::new();
    for r in [0.5, 1.0, 2.0] {
        for z in [[0.0, 0.0, 0.0], [1.0, -0.5, 0.5], [-2.0, 1.0, 0.0]] {
            let rep = checker.check(r, z, 0.1).unwrap();
            assert!(rep.lhs >= 0.0 && rep.rhs_shape > 0.0);
            assert!(rep.ratio.is_finite());
            ratios.push(rep.ratio);
        }
    }
    let one = tr1_bound_check(&set, 1.0, [1.0, -0.5, 0.5], 0.1).unwrap();
    assert_eq!(one.ratio, ratios[4]);
    assert!(checker.check(1.0, [0.0; 3], 0.5).is_err());
    let g1 = make_grid(1, 16, 4.0, Geometry::Box).unwrap();
    assert!(Tr1Checker::new(&random_set(g1, 2, 0.5, 1)).is_err());
}

#[test]
fn weight_validation() {
    let g = make_grid(1, 16, 4.0, Geometry::Torus).unwrap();
    let set = random_set(g, 2, 0.5, 3);
    assert!(commutator_spectrum(&set, &Weight::Position { axis: 1 }).is_err());
    assert!(commutator_spectrum(&set, &Weight::Gaussian { r: 0.0, z: [0.0; 3] }).is_err());
}
