use std::f64::consts::PI;

use fermimf_core::diagnostics::{commutator_spectrum, Weight};
use fermimf_core::lattice::{make_grid, ExternalPotential, Field, Geometry, Grid, Potential};
use fermimf_core::slater::{fermi_sea, trapped_ground, OrbitalSet};
use fermimf_core::tdhf::{evolve, hs_distance, projection_distance, HfModel, Scheme, StepOptions};
use fermimf_core::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
    (0..n).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
}

fn random_set(grid: Grid, n: usize, eps: f64, seed: u64) -> OrbitalSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let orbs = (0..n).map(|_| random_vec(grid.cells(), &mut rng)).collect();
    let mut set = OrbitalSet::new(grid, eps, orbs).unwrap();
    set.reorthonormalize().unwrap();
    set
}

fn min_image(grid: &Grid, a: usize, b: usize) -> f64 {
    let n = grid.n() as f64;
    let mut d = (a as f64 - b as f64).abs();
    d = d.min(n - d);
    d * grid.spacing()
}

/// `(X g)(x) = N^-1 sum_y V(x - y) omega(x; y) g(y) h` by direct double sum.
#[test]
fn exchange_matches_kernel_sum() {
    let g = make_grid(1, 32, 4.0, Geometry::Torus).unwrap();
    let a = 0.3;
    let pot = Potential::soft_coulomb(a).unwrap();
    let model = HfModel::new(&g, &pot, ExternalPotential::new(0.0, 0.0), true).unwrap();
    let set = random_set(g, 3, 0.4, 1);
    let state = model.state(set.clone(), 0.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let gv = random_vec(32, &mut rng);
    let x = model.apply_exchange(&state, &Field::new(g, gv.clone()).unwrap()).unwrap();
    let h = g.spacing();
    for i in 0..32 {
        let mut acc = Complex64::new(0.0, 0.0);
        for j in 0..32 {
            let d = min_image(&g, i, j);
            let v = 1.0 / (d * d + a * a).sqrt();
            let omega: Complex64 = set.orbitals.iter().map(|f| f[i] * f[j].conj()).sum();
            acc += v * omega * gv[j] * h;
        }
        acc /= 3.0;
        assert!((acc - x.values[i]).norm() <= 1e-10 * acc.norm().max(1.0));
    }
}

#[test]
fn exchange_is_self_adjoint_and_local() {
    let g = make_grid(1, 64, 8.0, Geometry::Torus).unwrap();
    let model = HfModel::new(&g, &Potential::soft_coulomb(0.2).unwrap(), ExternalPotential::new(0.0, 0.0), true).unwrap();
    let set = random_set(g, 4, 0.3, 5);
    let state = model.state(set, 0.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = Field::new(g, random_vec(64, &mut rng)).unwrap();
    let b = Field::new(g, random_vec(64, &mut rng)).unwrap();
    let lhs = a.inner(&model.apply_exchange(&state, &b).unwrap());
    let rhs = model.apply_exchange(&state, &a).unwrap().inner(&b);
    assert!((lhs - rhs).norm() <= 1e-12 * a.norm() * b.norm());

    // Orbital and test function with disjoint supports and a narrow kernel.
    let narrow = HfModel::new(&g, &Potential::gaussian(0.01, 1.0).unwrap(), ExternalPotential::new(0.0, 0.0), true).unwrap();
    let xs = g.coordinates();
    let bump = |c: f64| -> Vec<Complex64> {
        let v: Vec<Complex64> = xs.iter().map(|&x| Complex64::new((-(x - c).powi(2) / 0.02).exp(), 0.0)).collect();
        let nrm = (v.iter().map(|z| z.norm_sqr()).sum::<f64>() * g.spacing()).sqrt();
        v.into_iter().map(|z| z / nrm).collect()
    };
    let set = OrbitalSet::new(g, 0.3, vec![bump(-2.0)]).unwrap();
    let state = narrow.state(set, 0.0).unwrap();
    let far = Field::new(g, bump(2.0)).unwrap();
    assert!(narrow.apply_exchange(&state, &far).unwrap().norm() <= 1e-8);
}

#[test]
fn hf_rhs_properties() {
    let g = make_grid(1, 32, 2.0 * PI, Geometry::Torus).unwrap();
    let eps = 0.4;
    // Zero potential: h f = -eps^2 f''.
    let free = HfModel::new(&g, &Potential::zero(), ExternalPotential::new(0.0, 0.0), true).unwrap();
    let sea = fermi_sea(&g, 5, eps).unwrap();
    let st = free.state(sea.orbitals.clone(), 0.0).unwrap();
    for (hf, (f, k)) in free.hf_rhs(&st).iter().zip(sea.orbitals.orbitals.iter().zip(&sea.wave_vectors)) {
        let e = eps * eps * (k[0] * k[0]) as f64;
        assert!(hf.values.iter().zip(f).all(|(a, b)| (a - b * e).norm() < 1e-12));
    }
    // Plane waves stay eigenfunctions of the full mean-field operator.
    let model = HfModel::new(&g, &Potential::soft_coulomb(0.5).unwrap(), ExternalPotential::new(0.0, 0.0), true).unwrap();
    let st = model.state(sea.orbitals.clone(), 0.0).unwrap();
    for (hf, f) in model.hf_rhs(&st).iter().zip(&sea.orbitals.orbitals) {
        let ratio = hf.values[0] / f[0];
        assert!(hf.values.iter().zip(f).all(|(a, b)| (a - b * ratio).norm() < 1e-12));
    }
    // Random state: <f_i, h f_j> is Hermitian.
    let set = random_set(g, 3, eps, 9);
    let st = model.state(set.clone(), 0.0).unwrap();
    let hf = model.hf_rhs(&st);
    for i in 0..3 {
        for j in 0..3 {
            let a = set.field(i).inner(&hf[j]);
            let b = set.field(j).inner(&hf[i]).conj();
            assert!((a - b).norm() <= 1e-12 * a.norm().max(1.0));
        }
    }
}

/// `tr(-eps^2 Lap) omega + V_ext + (2N)^-1 sum_xy V [rho rho - |omega|^2] h^2`.
#[test]
fn energy_matches_kernel_quadrature() {
    let g = make_grid(1, 32, 5.0, Geometry::Torus).unwrap();
    let a = 0.25;
    let ext = ExternalPotential::new(0.3, 0.01);
    let model = HfModel::new(&g, &Potential::soft_coulomb(a).unwrap(), ext, true).unwrap();
    let set = random_set(g, 3, 0.35, 21);
    let st = model.state(set.clone(), 0.0).unwrap();
    let e = model.energy(&st);
    let h = g.spacing();
    let xs = g.coordinates();
    let rho = set.density();
    let mut two = 0.0;
    for i in 0..32 {
        for j in 0..32 {
            let d = min_image(&g, i, j);
            let v = 1.0 / (d * d + a * a).sqrt();
            let omega: Complex64 = set.orbitals.iter().map(|f| f[i] * f[j].conj()).sum();
            two += v * (rho[i] * rho[j] - omega.norm_sqr()) * h * h;
        }
    }
    let ext_e: f64 = rho.iter().zip(&xs).map(|(r, &x)| r * ext.axis_value(x)).sum::<f64>() * h;
    let total = set.kinetic_energy() + ext_e + two / 6.0;
    assert!((e.total - total).abs() <= 1e-10 * total.abs().max(1.0));

    let free = HfModel::new(&g, &Potential::zero(), ExternalPotential::new(0.0, 0.0), true).unwrap();
    let ef = free.energy(&free.state(set.clone(), 0.0).unwrap());
    assert_eq!(ef.direct, 0.0);
    assert_eq!(ef.exchange, 0.0);
    assert_eq!(ef.total, ef.kinetic);

    let one = random_set(g, 1, 0.35, 22);
    let e1 = model.energy(&model.state(one, 0.0).unwrap());
    assert!((e1.direct - e1.exchange).abs() <= 1e-14 * e1.direct.abs());
}

#[test]
fn free_gaussian_spreading() {
    let sigma0: f64 = 1.0;
    let eps = 0.5;
    let g = make_grid(1, 256, 40.0, Geometry::Torus).unwrap();
    let psi = |x: f64, t: f64| {
        let s = Complex64::new(sigma0 * sigma0, 2.0 * eps * t);
        (PI * sigma0 * sigma0).powf(-0.25) * sigma0 / s.sqrt() * (-(x * x) / (2.0 * s)).exp()
    };
    let xs = g.coordinates();
    let f0: Vec<Complex64> = xs.iter().map(|&x| psi(x, 0.0)).collect();
    let set = OrbitalSet::new(g, eps, vec![f0]).unwrap();
    let model = HfModel::new(&g, &Potential::zero(), ExternalPotential::new(0.0, 0.0), true).unwrap();
    let opts = StepOptions { reortho_every: None, ..StepOptions::default() };
    let end = evolve(&model, model.state(set, 0.0).unwrap(), 1.0, 1e-3, 1000, &opts, &mut |_, _| Ok(())).unwrap();
    let err: f64 = end.orbitals.orbitals[0]
        .iter()
        .zip(&xs)
        .map(|(v, &x)| (v - psi(x, 1.0)).norm_sqr())
        .sum::<f64>()
        * g.spacing();
    assert!(err.sqrt() <= 1e-6, "L2 error {}", err.sqrt());
}

fn interacting_run(scheme: Scheme, dt: f64) -> OrbitalSet {
    let g = make_grid(1, 64, 8.0, Geometry::Torus).unwrap();
    let eps = 0.3;
    let trap = ExternalPotential::harmonic(1.0);
    let set = trapped_ground(&g, 3, &trap, eps).unwrap();
    // Start from a displaced trap so the dynamics is nontrivial.
    let model = HfModel::new(&g, &Potential::soft_coulomb(0.5).unwrap(), ExternalPotential::new(0.5, 0.02), true).unwrap();
    let opts = StepOptions { scheme, reortho_every: None, ..StepOptions::default() };
    evolve(&model, model.state(set, 0.0).unwrap(), 0.4, dt, 1000, &opts, &mut |_, _| Ok(())).unwrap().orbitals
}

fn orbital_difference(a: &OrbitalSet, b: &OrbitalSet) -> f64 {
    let w = a.grid.cell_volume();
    a.orbitals
        .iter()
        .zip(&b.orbitals)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).norm_sqr()).sum::<f64>() * w)
        .sum::<f64>()
        .sqrt()
}

#[test]
fn second_order_under_dt_halving() {
    for scheme in [Scheme::Midpoint, Scheme::Strang] {
        let u1 = interacting_run(scheme, 0.02);
        let u2 = interacting_run(scheme, 0.01);
        let u4 = interacting_run(scheme, 0.005);
        let ratio = orbital_difference(&u1, &u2) / orbital_difference(&u2, &u4);
        assert!(ratio >= 3.6, "{scheme:?}: ratio {ratio}");
    }
}

#[test]
fn zero_step_is_identity() {
    let g = make_grid(1, 32, 6.0, Geometry::Torus).unwrap();
    let model = HfModel::new(&g, &Potential::soft_coulomb(0.3).unwrap(), ExternalPotential::harmonic(1.0), true).unwrap();
    let st = model.state(random_set(g, 2, 0.3, 3), 0.0).unwrap();
    let next = model.step(&st, 0.0, &StepOptions::default()).unwrap();
    assert_eq!(next.orbitals, st.orbitals);
}

#[test]
fn conservation_on_interacting_trap() {
    let g = make_grid(1, 64, 10.0, Geometry::Torus).unwrap();
    let eps = 0.25;
    let set = trapped_ground(&g, 4, &ExternalPotential::harmonic(1.0), eps).unwrap();
    let model = HfModel::new(&g, &Potential::soft_coulomb(0.2).unwrap(), ExternalPotential::new(0.6, 0.02), true).unwrap();
    let mut e0 = None;
    let mut worst = 0.0f64;
    let mut gram = 0.0f64;
    evolve(&model, model.state(set, 0.0).unwrap(), 1.0, 1e-3, 50, &StepOptions::default(), &mut |_, obs| {
        let e = *e0.get_or_insert(obs.energy.total);
        worst = worst.max((obs.energy.total - e).abs() / e.abs());
        gram = gram.max(obs.gram_error);
        assert!(obs.idempotency_error <= 2.0 * obs.gram_error + 1e-12);
        Ok(())
    })
    .unwrap();
    assert!(worst <= 1e-6, "relative energy drift {worst}");
    assert!(gram <= 1e-8, "gram error {gram}");
}

#[test]
fn translation_invariant_data_is_stationary() {
    let g = make_grid(1, 32, 2.0 * PI, Geometry::Torus).unwrap();
    let sea = fermi_sea(&g, 5, 0.3).unwrap();
    let model = HfModel::new(&g, &Potential::soft_coulomb(0.2).unwrap(), ExternalPotential::new(0.0, 0.0), true).unwrap();
    let mut worst = 0.0f64;
    let init = sea.orbitals.clone();
    evolve(&model, model.state(sea.orbitals, 0.0).unwrap(), 1.0, 1e-2, 10, &StepOptions::default(), &mut |s, _| {
        worst = worst.max(projection_distance(&g, &init.orbitals, &s.orbitals.orbitals));
        Ok(())
    })
    .unwrap();
    assert!(worst <= 1e-6 * 5f64.sqrt());
}

#[test]
fn gauge_covariance() {
    let g = make_grid(1, 32, 6.0, Geometry::Torus).unwrap();
    let model = HfModel::new(&g, &Potential::soft_coulomb(0.3).unwrap(), ExternalPotential::harmonic(0.5), true).unwrap();
    let set = random_set(g, 3, 0.3, 17);
    let mut rotated = set.clone();
    for (j, f) in rotated.orbitals.iter_mut().enumerate() {
        let phase = Complex64::from_polar(1.0, 0.7 * j as f64 + 0.1);
        f.iter_mut().for_each(|v| *v *= phase);
    }
    let a = model.state(set.clone(), 0.0).unwrap();
    let b = model.state(rotated.clone(), 0.0).unwrap();
    assert!(a.density.iter().zip(&b.density).all(|(x, y)| (x - y).abs() <= 1e-12 * x.abs().max(1e-300)));
    let (ea, eb) = (model.energy(&a).total, model.energy(&b).total);
    assert!((ea - eb).abs() <= 1e-12 * ea.abs());
    assert!(projection_distance(&g, &set.orbitals, &rotated.orbitals) <= 1e-12);
    assert!(hs_distance(&set, &rotated) <= 1e-7);
    let w = Weight::Gradient { axis: 0 };
    let ta = commutator_spectrum(&set, &w).unwrap().trace_norm();
    let tb = commutator_spectrum(&rotated, &w).unwrap().trace_norm();
    assert!((ta - tb).abs() <= 1e-12 * ta);
}
