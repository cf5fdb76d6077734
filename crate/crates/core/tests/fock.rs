use std::f64::consts::PI;
use std::time::Instant;

use fermimf_core::fock::{
    annihilation_of, car_ops, complete_unitary, creation_of, dgamma, excitation_identity, excitation_number,
    fluctuation_evolution, fock_hamiltonian, mode_basis, number_operator, pair_annihilation, reduced_density_fock,
    slater_state, Completion, FockBasis, FockOperator, FockVector, ModeHartreeFock, ParticleHoleFrame, SparseMatrix,
    TwoBody,
};
use fermimf_core::lattice::{make_grid, ExternalPotential, Geometry, Grid, Potential};
use fermimf_core::slater::OrbitalSet;
use fermimf_core::Complex64;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cx(rng: &mut ChaCha8Rng) -> Complex64 {
    Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
}

fn random_vector(basis: FockBasis, rng: &mut ChaCha8Rng) -> FockVector {
    let v: Vec<Complex64> = (0..basis.dim()).map(|_| cx(rng)).collect();
    let n = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    FockVector::new(basis, v.into_iter().map(|x| x / n).collect()).unwrap()
}

fn random_matrix(m: usize, rng: &mut ChaCha8Rng) -> DMatrix<Complex64> {
    DMatrix::from_fn(m, m, |_, _| cx(rng))
}

/// Orthonormal columns from QR of a random matrix.
fn random_orbitals(m: usize, n: usize, rng: &mut ChaCha8Rng) -> DMatrix<Complex64> {
    let q = random_matrix(m, rng).qr().q();
    q.columns(0, n).into_owned()
}

fn singular_values(a: &DMatrix<Complex64>) -> Vec<f64> {
    let mut s: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

fn op_norm(op: &FockOperator) -> f64 {
    singular_values(&op.matrix.to_dense())[0]
}

fn vec_norm(v: &[Complex64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

fn diff_norm(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
}

#[test]
fn canonical_anticommutation_relations() {
    for m in 1..=6 {
        let ops = car_ops(m).unwrap();
        let dim = 1 << m;
        let id = SparseMatrix::identity(dim);
        for i in 0..m {
            assert!((op_norm(&ops.annihilation[i]) - 1.0).abs() <= 1e-14);
            for j in 0..m {
                let ac = ops.annihilation[i].anticommutator(&ops.creation[j]).matrix;
                let expect = if i == j { ac.add_scaled(&id, Complex64::new(-1.0, 0.0)) } else { ac };
                assert!(expect.max_abs() <= 1e-14);
                assert!(ops.annihilation[i].anticommutator(&ops.annihilation[j]).matrix.max_abs() <= 1e-14);
                assert!(ops.creation[i].anticommutator(&ops.creation[j]).matrix.max_abs() <= 1e-14);
            }
            let omega = FockVector::vacuum(FockBasis::new(m).unwrap());
            assert_eq!(ops.annihilation[i].apply(&omega).norm(), 0.0);
        }
    }
    assert!(car_ops(15).is_err());
}

#[test]
fn jordan_wigner_sign_convention() {
    let ops = car_ops(3).unwrap();
    let basis = FockBasis::new(3).unwrap();
    // a*_0 a*_2 Omega = |{0, 2}>, and a*_2 a*_0 Omega = -|{0, 2}>.
    let omega = FockVector::vacuum(basis);
    let a = ops.creation[0].apply(&ops.creation[2].apply(&omega));
    assert_eq!(a.values[0b101], Complex64::new(1.0, 0.0));
    let b = ops.creation[2].apply(&ops.creation[0].apply(&omega));
    assert_eq!(b.values[0b101], Complex64::new(-1.0, 0.0));
}

#[test]
fn field_operator_norms() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let basis = FockBasis::new(5).unwrap();
    for _ in 0..10 {
        let f: Vec<Complex64> = (0..5).map(|_| cx(&mut rng)).collect();
        let nf = vec_norm(&f);
        assert!((op_norm(&annihilation_of(basis, &f).unwrap()) - nf).abs() <= 1e-12 * nf);
        assert!((op_norm(&creation_of(basis, &f).unwrap()) - nf).abs() <= 1e-12 * nf);
    }
}

#[test]
fn second_quantization() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let basis = FockBasis::new(5).unwrap();
    let id = DMatrix::<Complex64>::identity(5, 5);
    let num = number_operator(basis);
    assert_eq!(dgamma(basis, &id).unwrap().matrix.add_scaled(&num.matrix, Complex64::new(-1.0, 0.0)).max_abs(), 0.0);
    let ops = car_ops(5).unwrap();
    for _ in 0..20 {
        let j = random_matrix(5, &mut rng);
        let dg = dgamma(basis, &j).unwrap();
        assert!(dg.tags.number_conserving && dg.tags.quadratic);
        let mut brute = SparseMatrix::from_triplets(32, vec![]);
        for x in 0..5 {
            for y in 0..5 {
                brute = brute.add_scaled(&ops.creation[x].matmul(&ops.annihilation[y]).matrix, j[(x, y)]);
            }
        }
        assert!(brute.add_scaled(&dg.matrix, Complex64::new(-1.0, 0.0)).max_abs() <= 1e-13);
        let psi = random_vector(basis, &mut rng);
        let lhs = psi.inner(&dg.apply(&psi));
        let gamma = reduced_density_fock(&psi);
        let rhs = (&j * &gamma).trace();
        assert!((lhs - rhs).norm() <= 1e-12);
        assert!((gamma.trace().re - psi.number_expectation()).abs() <= 1e-12);
    }
}

fn sqrt_number(psi: &FockVector) -> Vec<Complex64> {
    psi.values.iter().enumerate().map(|(s, v)| v * (s.count_ones() as f64).sqrt()).collect()
}

fn number_applied(psi: &FockVector) -> Vec<Complex64> {
    psi.values.iter().enumerate().map(|(s, v)| v * s.count_ones() as f64).collect()
}

/// Randomized checks of the second-quantized operator bounds.
#[test]
fn operator_bounds_hold_on_random_draws() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let basis = FockBasis::new(6).unwrap();
    let mut violations = 0;
    let draws = 120;
    for _ in 0..draws {
        let j = random_matrix(6, &mut rng);
        let psi = random_vector(basis, &mut rng);
        let sv = singular_values(&j);
        let op = sv[0];
        let hs = sv.iter().map(|s| s * s).sum::<f64>().sqrt();
        let tr: f64 = sv.iter().sum();
        let dg = dgamma(basis, &j).unwrap();
        let dpsi = dg.apply(&psi);
        let n_exp = psi.number_expectation();
        let n_half = vec_norm(&sqrt_number(&psi));
        let n_full = vec_norm(&number_applied(&psi));
        let tol = 1e-12;
        if psi.inner(&dpsi).norm() > op * n_exp + tol {
            violations += 1;
        }
        if dpsi.norm() > op * n_full + tol {
            violations += 1;
        }
        if dpsi.norm() > hs * n_half + tol {
            violations += 1;
        }
        let pair = pair_annihilation(basis, &j).unwrap();
        if pair.apply(&psi).norm() > hs * n_half + tol {
            violations += 1;
        }
        if op_norm(&pair) > 2.0 * tr + tol {
            violations += 1;
        }
    }
    assert_eq!(violations, 0);
}

fn bog_check(orbitals: &DMatrix<Complex64>, frame: &ParticleHoleFrame, rng: &mut ChaCha8Rng) {
    let m = orbitals.nrows();
    let n = orbitals.ncols();
    let basis = frame.basis;
    let r = frame.to_dense();
    let omega = orbitals * orbitals.adjoint();
    let u = DMatrix::<Complex64>::identity(m, m) - &omega;
    for _ in 0..3 {
        let g: Vec<Complex64> = (0..m).map(|_| cx(rng)).collect();
        let gv = nalgebra::DVector::from_column_slice(&g);
        let ug: Vec<Complex64> = (&u * &gv).iter().copied().collect();
        // sum_j <g, f_j> f_j.
        let mut vg = vec![Complex64::new(0.0, 0.0); m];
        for j in 0..n {
            let c: Complex64 = (0..m).map(|x| g[x].conj() * orbitals[(x, j)]).sum();
            for x in 0..m {
                vg[x] += c * orbitals[(x, j)];
            }
        }
        let lhs = r.adjoint() * annihilation_of(basis, &g).unwrap().matrix.to_dense() * &r;
        let rhs = annihilation_of(basis, &ug).unwrap().matrix.to_dense() + creation_of(basis, &vg).unwrap().matrix.to_dense();
        let err = (&lhs - &rhs).iter().fold(0.0f64, |a, x| a.max(x.norm()));
        assert!(err <= 1e-12, "bog relation error {err}");
    }
    let unit = r.adjoint() * &r - DMatrix::<Complex64>::identity(basis.dim(), basis.dim());
    assert!(unit.iter().fold(0.0f64, |a, x| a.max(x.norm())) <= 1e-12);
    // R Omega is the Slater state up to a global phase.
    let vac = frame.apply(&FockVector::vacuum(basis));
    let slater = slater_state(basis, orbitals).unwrap();
    let overlap = slater.inner(&vac);
    assert!((overlap.norm() - 1.0).abs() <= 1e-12);
    let phase = overlap / overlap.norm();
    let aligned: Vec<Complex64> = slater.values.iter().map(|v| v * phase).collect();
    assert!(diff_norm(&aligned, &vac.values) <= 1e-12);
}

#[test]
fn particle_hole_transformation() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (m, n) in [(4, 1), (5, 2), (6, 3), (6, 2)] {
        let orbs = random_orbitals(m, n, &mut rng);
        let frame = ParticleHoleFrame::new(&orbs).unwrap();
        let u = &frame.unitary;
        let ortho = u.adjoint() * u - DMatrix::<Complex64>::identity(m, m);
        assert!(ortho.iter().fold(0.0f64, |a, x| a.max(x.norm())) <= 1e-12);
        assert!((frame.omega() - &orbs * orbs.adjoint()).iter().fold(0.0f64, |a, x| a.max(x.norm())) <= 1e-12);
        bog_check(&orbs, &frame, &mut rng);
        let w = random_matrix(m - n, &mut rng).qr().q();
        let twisted = Completion::Twisted(w).frame(&orbs).unwrap();
        bog_check(&orbs, &twisted, &mut rng);
    }
    let bad = DMatrix::<Complex64>::from_element(4, 2, Complex64::new(0.5, 0.0));
    assert!(ParticleHoleFrame::new(&bad).is_err());
    let big = random_orbitals(13, 2, &mut rng);
    assert!(ParticleHoleFrame::new(&big).is_err());
}

#[test]
fn excitation_identity_on_random_vectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (m, n) in [(5, 2), (6, 3), (8, 3)] {
        let basis = FockBasis::new(m).unwrap();
        let orbs = random_orbitals(m, n, &mut rng);
        let frame = ParticleHoleFrame::new(&orbs).unwrap();
        for _ in 0..10 {
            let psi = random_vector(basis, &mut rng);
            let lhs = excitation_number(&frame, &psi);
            let gamma = reduced_density_fock(&psi);
            let rhs = excitation_identity(&gamma, &frame.omega(), n, 1.0);
            assert!((lhs - rhs).abs() <= 1e-12, "{lhs} vs {rhs}");
        }
        assert!(excitation_number(&frame, &slater_state(basis, &orbs).unwrap()).abs() <= 1e-12);
    }
}

/// Plane waves `exp(i k x) / sqrt(L)` with `k` in `kappa * (-m/2 + 1 ..= m/2)`.
fn plane_wave_modes(grid: &Grid, m: usize, eps: f64) -> OrbitalSet {
    let kappa = 2.0 * PI / grid.length();
    let amp = 1.0 / grid.length().sqrt();
    let orbs = (0..m)
        .map(|i| {
            let k = kappa * (i as f64 - (m / 2) as f64 + 1.0);
            grid.coordinates().iter().map(|&x| Complex64::from_polar(amp, k * x)).collect()
        })
        .collect();
    OrbitalSet::new(*grid, eps, orbs).unwrap()
}

#[test]
fn two_body_coefficients_and_hamiltonian_symmetries() {
    let g = make_grid(1, 32, 2.0 * PI, Geometry::Torus).unwrap();
    let modes = plane_wave_modes(&g, 6, 0.5);
    let mb = mode_basis(&modes, &Potential::soft_coulomb(0.5).unwrap(), &ExternalPotential::harmonic(0.3)).unwrap();
    let scale = (0..6).map(|i| mb.v.get(i, i, i, i).norm()).fold(0.0, f64::max);
    assert!(mb.v.symmetry_error() <= 1e-10 * scale);
    let herm = (&mb.h - mb.h.adjoint()).iter().fold(0.0f64, |a, x| a.max(x.norm()));
    assert!(herm <= 1e-12);
    let ham = fock_hamiltonian(&mb.h, &mb.v, 2, 0.5).unwrap();
    assert!(ham.operator.tags.quartic && ham.operator.tags.number_conserving);
    let num = number_operator(ham.operator.basis);
    assert!(ham.operator.commutator(&num).matrix.max_abs() <= 1e-12);
    let hd = ham.operator.matrix.to_dense();
    assert!((&hd - hd.adjoint()).iter().fold(0.0f64, |a, x| a.max(x.norm())) <= 1e-12);
    let mut broken = mb.v.clone();
    broken.set(0, 1, 2, 3, broken.get(0, 1, 2, 3) + Complex64::new(1.0, 0.0));
    assert!(fock_hamiltonian(&mb.h, &broken, 2, 0.5).is_err());
}

#[test]
fn noninteracting_spectrum_is_additive() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let m = 5;
    let a = random_matrix(m, &mut rng);
    let h = (&a + a.adjoint()) * Complex64::new(0.5, 0.0);
    let ham = fock_hamiltonian(&h, &TwoBody::zeros(m), 2, 1.0).unwrap();
    let eig1: Vec<f64> = h.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    let mut expect: Vec<f64> = (0..1usize << m)
        .map(|s| (0..m).filter(|j| s & (1 << j) != 0).map(|j| eig1[j]).sum())
        .collect();
    expect.sort_by(|x, y| x.total_cmp(y));
    let mut got: Vec<f64> = ham.operator.matrix.to_dense().symmetric_eigen().eigenvalues.iter().copied().collect();
    got.sort_by(|x, y| x.total_cmp(y));
    for (x, y) in got.iter().zip(&expect) {
        assert!((x - y).abs() <= 1e-10);
    }
}

/// First-quantized `sum_i h_i + N^-1 V(x_1 - x_2)` on antisymmetrized
/// plane-wave pairs against the two-particle sector of the Fock Hamiltonian.
#[test]
fn two_particle_sector_matches_first_quantization() {
    let n = 16;
    let g = make_grid(1, n, 2.0 * PI, Geometry::Torus).unwrap();
    let eps = 0.7;
    let m = 6;
    let pot = Potential::soft_coulomb(0.4).unwrap();
    let ext = ExternalPotential::new(0.2, 0.01);
    let modes = plane_wave_modes(&g, m, eps);
    let mb = mode_basis(&modes, &pot, &ext).unwrap();
    let ham = fock_hamiltonian(&mb.h, &mb.v, 2, eps).unwrap();
    let h = g.spacing();
    let kappa = 2.0 * PI / g.length();
    let k = |i: usize| kappa * (i as f64 - (m / 2) as f64 + 1.0);
    let phi = &modes.orbitals;
    let xs = g.coordinates();
    // Pair wavefunction Phi_ab(x, y) = (phi_a(x) phi_b(y) - phi_b(x) phi_a(y)) / sqrt 2.
    let pair = |a: usize, b: usize| -> Vec<Complex64> {
        let mut out = Vec::with_capacity(n * n);
        for x in 0..n {
            for y in 0..n {
                out.push((phi[a][x] * phi[b][y] - phi[b][x] * phi[a][y]) / 2f64.sqrt());
            }
        }
        out
    };
    // H Phi_cd: kinetic is diagonal on plane waves, the rest is a multiplier.
    let apply_h = |c: usize, d: usize| -> Vec<Complex64> {
        let kin = eps * eps * (k(c).powi(2) + k(d).powi(2));
        let base = pair(c, d);
        let mut out = Vec::with_capacity(n * n);
        for x in 0..n {
            for y in 0..n {
                let v = ext.axis_value(xs[x]) + ext.axis_value(xs[y]) + 0.5 * pot.pair_value(&g, x, y);
                out.push(base[x * n + y] * kin);
                let last = out.last_mut().unwrap();
                *last += base[x * n + y] * v;
            }
        }
        out
    };
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|a| (a + 1..m).map(move |b| (a, b))).collect();
    let mut worst = 0.0f64;
    for &(c, d) in &pairs {
        let hphi = apply_h(c, d);
        for &(a, b) in &pairs {
            let left = pair(a, b);
            let first: Complex64 = left.iter().zip(&hphi).map(|(l, r)| l.conj() * r).sum::<Complex64>() * h * h;
            let fock = ham.operator.matrix.get((1 << a) | (1 << b), (1 << c) | (1 << d));
            worst = worst.max((first - fock).norm());
        }
    }
    assert!(worst <= 1e-10, "max deviation {worst}");
}

fn fluctuation_setup(m: usize, n: usize, coupling: f64) -> (ModeHartreeFock, fermimf_core::fock::FockHamiltonian, DMatrix<Complex64>) {
    let g = make_grid(1, 32, 2.0 * PI, Geometry::Torus).unwrap();
    let eps = 0.5;
    let modes = plane_wave_modes(&g, m, eps);
    let pot = Potential::soft_coulomb(0.5).unwrap().scaled(coupling);
    let mb = mode_basis(&modes, &pot, &ExternalPotential::harmonic(0.5)).unwrap();
    let hf = ModeHartreeFock::new(&mb, n);
    let ham = fock_hamiltonian(&mb.h, &mb.v, n, eps).unwrap();
    let eig = mb.h.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let orbs = DMatrix::from_fn(m, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (hf, ham, orbs)
}

#[test]
fn noninteracting_fluctuations_vanish() {
    let (hf, ham, orbs) = fluctuation_setup(6, 2, 0.0);
    let basis = ham.operator.basis;
    // Start away from an eigenstate so the flow is nontrivial.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let q = random_matrix(6, &mut rng).qr().q();
    let start = &q * &orbs;
    let samples =
        fluctuation_evolution(&FockVector::vacuum(basis), &start, &hf, &ham, 1.0, 0.01, 10, &Completion::Pivoted).unwrap();
    for s in &samples {
        assert!(s.excitations.abs() <= 1e-10, "t = {}: {}", s.t, s.excitations);
        assert!((s.norm - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn interacting_fluctuations_identity_and_completion_independence() {
    let start = Instant::now();
    let (hf, ham, orbs) = fluctuation_setup(10, 3, 1.0);
    let basis = ham.operator.basis;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let w = random_matrix(7, &mut rng).qr().q();
    let vac = FockVector::vacuum(basis);
    let a = fluctuation_evolution(&vac, &orbs, &hf, &ham, 1.0, 0.01, 10, &Completion::Pivoted).unwrap();
    let b = fluctuation_evolution(&vac, &orbs, &hf, &ham, 1.0, 0.01, 10, &Completion::Twisted(w)).unwrap();
    assert_eq!(a.len(), 11);
    for (x, y) in a.iter().zip(&b) {
        assert!((x.excitations - x.identity).abs() <= 1e-8);
        assert!((x.excitations - y.excitations).abs() <= 1e-10);
        assert!((x.norm - 1.0).abs() <= 1e-10);
    }
    assert!(a[0].excitations.abs() <= 1e-12);
    assert!(a.last().unwrap().excitations > 1e-8);
    assert!(start.elapsed().as_secs() < 300);
}

#[test]
fn completion_is_unitary_and_extends_orbitals() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let orbs = random_orbitals(7, 3, &mut rng);
    let u = complete_unitary(&orbs).unwrap();
    assert!((u.columns(0, 3) - &orbs).iter().fold(0.0f64, |a, x| a.max(x.norm())) == 0.0);
    let ortho = u.adjoint() * &u - DMatrix::<Complex64>::identity(7, 7);
    assert!(ortho.iter().fold(0.0f64, |a, x| a.max(x.norm())) <= 1e-12);
}
