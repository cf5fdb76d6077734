//! Subcommand pipelines.

use std::f64::consts::PI;
use std::time::Instant;

use fermimf_core::diagnostics::{assumption_scan, ScanWeight, Tr1Checker};
use fermimf_core::fdll::{fdll_reconstruct, FdllQuadrature};
use fermimf_core::fmf::FmfArray;
use fermimf_core::fock::{
    annihilation_of, car_ops, creation_of, dgamma, excitation_identity, excitation_number, fluctuation_evolution,
    fock_hamiltonian, mode_basis, pair_annihilation, reduced_density_fock, slater_state, Completion, FockBasis,
    FockVector, ModeHartreeFock, ParticleHoleFrame, SparseMatrix,
};
use fermimf_core::lattice::{make_grid, Geometry, Grid};
use fermimf_core::linalg::expm_hermitian_dense;
use fermimf_core::manybody::{reduced_density, slater_wavefunction, theorem_distances, ManyBodyModel};
use fermimf_core::slater::{coherent_state, fermi_sea, trapped_ground, OrbitalSet};
use fermimf_core::tdhf::{evolve, projection_distance, HFEnergyBreakdown, HfModel};
use fermimf_core::vlasov::{compare_hf_vlasov, VlasovSolver};
use fermimf_core::wigner::{wigner_transform_range, WignerField, WignerRange};
use fermimf_core::{Complex64, Error as CoreError};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{ExperimentConfig, Generator, RangeCfg, WeightCfg};
use crate::error::{Context, RunError};
use crate::output::RunDir;

fn config_err(path: &str, message: impl Into<String>) -> RunError {
    RunError::Config { path: path.into(), message: message.into() }
}

fn initial_set(cfg: &ExperimentConfig, grid: &Grid, n: usize, eps: f64) -> Result<OrbitalSet, RunError> {
    match cfg.init.generator {
        Generator::FermiSea => {
            let sea = fermi_sea(grid, n, eps).at("init.generator")?;
            if !sea.closed_shell {
                log::warn!("fermi sea with N = {n} fills a partial shell");
            }
            Ok(sea.orbitals)
        }
        Generator::Trapped => {
            let trap = cfg.init.trap.unwrap_or(cfg.potential.external);
            trapped_ground(grid, n, &trap.into(), eps).at("init.trap")
        }
        Generator::Coherent => {
            if n != 1 {
                return Err(config_err("init.generator", format!("coherent data is a single orbital (N = {n})")));
            }
            let sigma = cfg.init.sigma * eps.powf(cfg.init.sigma_power);
            coherent_state(grid, eps, sigma, cfg.init.x0, cfg.init.v0).at("init")
        }
    }
}

fn orbitals_array(set: &OrbitalSet) -> FmfArray {
    let data = set.orbitals.iter().flatten().copied().collect();
    FmfArray::complex(vec![set.len() as u64, set.grid.cells() as u64], data).expect("orbital array shape")
}

fn density_array(set: &OrbitalSet) -> FmfArray {
    let dims = set.grid.shape().into_iter().map(|d| d as u64).collect();
    FmfArray::real(dims, set.density()).expect("density array shape")
}

fn hf_model(cfg: &ExperimentConfig, grid: &Grid) -> Result<HfModel, RunError> {
    let pot = cfg.potential()?;
    HfModel::new(grid, &pot, cfg.external(), cfg.potential.exchange).at("grid.geometry")
}

pub fn init(cfg: &ExperimentConfig, run: &mut RunDir) -> Result<(), RunError> {
    let grid = cfg.make_grid()?;
    let set = initial_set(cfg, &grid, cfg.scaling.n_particles, cfg.eps())?;
    let rep = set.check_projection();
    run.metric(0.0, "gram_error", rep.gram_error, "slater")?;
    run.metric(0.0, "idempotency_error", rep.idempotency_error, "slater")?;
    run.metric(0.0, "kinetic_energy", set.kinetic_energy(), "slater")?;
    if grid.geometry() == Geometry::Torus {
        let model = hf_model(cfg, &grid)?;
        let state = model.state(set.clone(), 0.0).at("init")?;
        run.metric(0.0, "energy_total", model.energy(&state).total, "tdhf")?;
    }
    run.save_array("orbitals.fmf", &orbitals_array(&set))?;
    run.save_array("density.fmf", &density_array(&set))?;
    Ok(())
}

#[derive(Debug, Clone, Copy)]
struct Sample {
    t: f64,
    energy: HFEnergyBreakdown,
    gram: f64,
    idem: f64,
    hs: f64,
}

struct Trajectory {
    samples: Vec<Sample>,
    snapshots: Vec<(f64, OrbitalSet)>,
    checkpoints: Vec<(usize, OrbitalSet)>,
    last: OrbitalSet,
}

/// Observed steps nearest to `count` evenly spaced times.
fn snapshot_steps(steps: usize, stride: usize, count: usize) -> Vec<usize> {
    if count <= 1 {
        return vec![0];
    }
    let mut out: Vec<usize> = (0..count)
        .map(|k| {
            let target = k as f64 * steps as f64 / (count - 1) as f64;
            (((target / stride as f64).round() as usize) * stride).min(steps)
        })
        .collect();
    out.dedup();
    out
}

fn run_hf(cfg: &ExperimentConfig, set: OrbitalSet, snapshots: usize) -> Result<Trajectory, RunError> {
    let grid = set.grid;
    let model = hf_model(cfg, &grid)?;
    let e = &cfg.evolve;
    let steps = (e.t_final / e.dt).round().max(1.0) as usize;
    let wanted = snapshot_steps(steps, e.stride, snapshots);
    let n = set.len() as f64;
    let init = set.orbitals.clone();
    let mut samples = Vec::new();
    let mut snaps = Vec::new();
    let mut checkpoints = Vec::new();
    let guard = e.gram_guard;
    let keep = cfg.output.checkpoints;
    let state = model.state(set, 0.0).at("init")?;
    let last = evolve(&model, state, e.t_final, e.dt, e.stride, &cfg.step_options(), &mut |s, obs| {
        if !obs.energy.total.is_finite() {
            return Err(CoreError::Guard(format!("energy is not finite at t = {}", obs.t)));
        }
        if obs.gram_error > guard {
            return Err(CoreError::Guard(format!("Gram error {:.3e} exceeds {guard:.1e} at t = {}", obs.gram_error, obs.t)));
        }
        let hs = projection_distance(&grid, &init, &s.orbitals.orbitals) / n.sqrt();
        samples.push(Sample { t: obs.t, energy: obs.energy, gram: obs.gram_error, idem: obs.idempotency_error, hs });
        if wanted.contains(&obs.step) {
            snaps.push((obs.t, s.orbitals.clone()));
        }
        if keep {
            checkpoints.push((obs.step, s.orbitals.clone()));
        }
        Ok(())
    })
    .at("evolve")?;
    Ok(Trajectory { samples, snapshots: snaps, checkpoints, last: last.orbitals })
}

#[derive(Serialize)]
struct EvolveRow {
    t: f64,
    kinetic: f64,
    external: f64,
    direct: f64,
    exchange: f64,
    total: f64,
    drift: f64,
    gram_error: f64,
    idempotency_error: f64,
    hs_from_initial: f64,
}

fn write_trajectory(run: &mut RunDir, traj: &Trajectory) -> Result<(), RunError> {
    let e0 = traj.samples[0].energy.total;
    let mut w = run.csv("evolve.csv")?;
    for s in &traj.samples {
        let drift = if e0.abs() > 1e-12 { (s.energy.total - e0).abs() / e0.abs() } else { (s.energy.total - e0).abs() };
        w.serialize(EvolveRow {
            t: s.t,
            kinetic: s.energy.kinetic,
            external: s.energy.external,
            direct: s.energy.direct,
            exchange: s.energy.exchange,
            total: s.energy.total,
            drift,
            gram_error: s.gram,
            idempotency_error: s.idem,
            hs_from_initial: s.hs,
        })?;
        run.metric(s.t, "energy_total", s.energy.total, "tdhf")?;
        run.metric(s.t, "energy_drift", drift, "tdhf")?;
        run.metric(s.t, "gram_error", s.gram, "tdhf")?;
        run.metric(s.t, "idempotency_error", s.idem, "tdhf")?;
        run.metric(s.t, "hs_from_initial", s.hs, "tdhf")?;
    }
    w.flush()?;
    for (step, set) in &traj.checkpoints {
        run.save_array(&format!("checkpoint_{step:06}.fmf"), &orbitals_array(set))?;
    }
    run.save_array("orbitals_final.fmf", &orbitals_array(&traj.last))?;
    Ok(())
}

pub fn evolve_cmd(cfg: &ExperimentConfig, run: &mut RunDir) -> Result<(), RunError> {
    let grid = cfg.make_grid()?;
    let set = initial_set(cfg, &grid, cfg.scaling.n_particles, cfg.eps())?;
    let traj = run_hf(cfg, set, 1)?;
    write_trajectory(run, &traj)
}

#[derive(Serialize)]
struct ScanCsvRow {
    t: f64,
    weight: &'static str,
    axis: usize,
    p: f64,
    l1: f64,
    lp: f64,
    ratio: f64,
}

#[derive(Serialize)]
struct Tr1Row {
    r: f64,
    z1: f64,
    z2: f64,
    z3: f64,
    lhs: f64,
    rhs_shape: f64,
    ratio: f64,
}

pub fn diagnose(cfg: &ExperimentConfig, run: &mut RunDir) -> Result<(), RunError> {
    let grid = cfg.make_grid()?;
    let set = initial_set(cfg, &grid, cfg.scaling.n_particles, cfg.eps())?;
    let d = &cfg.diagnostics;
    if d.z_lattice > 0 && grid.dim() != 3 {
        return Err(config_err("diagnostics.z-lattice", "the trace-norm check needs d = 3"));
    }
    let snapshots = if d.snapshots > 1 {
        let traj = run_hf(cfg, set.clone(), d.snapshots)?;
        write_trajectory(run, &traj)?;
        traj.snapshots
    } else {
        vec![(0.0, set.clone())]
    };
    let mut w = run.csv("scan.csv")?;
    for weight in &d.weights {
        let (sw, label, metric) = match weight {
            WeightCfg::Position => (ScanWeight::Position, "position", "scan_ratio_position"),
            WeightCfg::Gradient => (ScanWeight::Gradient, "gradient", "scan_ratio_gradient"),
        };
        let table = assumption_scan(&snapshots, sw, d.p, d.allow_small_p).at("diagnostics.p")?;
        for r in &table.rows {
            w.serialize(ScanCsvRow { t: r.t, weight: label, axis: r.axis + 1, p: r.p, l1: r.l1, lp: r.lp, ratio: r.ratio })?;
        }
        for tot in &table.totals {
            run.metric(tot.t, metric, tot.ratio, "diagnostics")?;
        }
    }
    w.flush()?;
    if d.z_lattice > 0 {
        let start = Instant::now();
        let checker = Tr1Checker::new(&set).at("diagnostics")?;
        let k = d.z_lattice;
        let l = grid.length();
        let centers: Vec<f64> = (0..k).map(|i| -0.5 * l + (i as f64 + 0.5) * l / k as f64).collect();
        let mut w = run.csv("tr1.csv")?;
        let (mut lo, mut hi, mut bad, mut count) = (f64::INFINITY, 0.0f64, 0usize, 0usize);
        for &r in &d.r_list {
            for &a in &centers {
                for &b in &centers {
                    for &c in &centers {
                        let rep = checker.check(r, [a, b, c], d.delta).at("diagnostics.delta")?;
                        count += 1;
                        let ok = rep.lhs.is_finite() && rep.rhs_shape.is_finite() && rep.lhs >= 0.0 && rep.rhs_shape > 0.0;
                        if ok {
                            lo = lo.min(rep.ratio);
                            hi = hi.max(rep.ratio);
                        } else {
                            bad += 1;
                        }
                        w.serialize(Tr1Row { r, z1: a, z2: b, z3: c, lhs: rep.lhs, rhs_shape: rep.rhs_shape, ratio: rep.ratio })?;
                    }
                }
            }
        }
        w.flush()?;
        log::info!("trace-norm check: {count} samples in {:.1?}", start.elapsed());
        run.metric(0.0, "tr1_samples", count as f64, "diagnostics")?;
        run.metric(0.0, "tr1_violations", bad as f64, "diagnostics")?;
        if bad < count {
            run.metric(0.0, "tr1_ratio_min", lo, "diagnostics")?;
            run.metric(0.0, "tr1_ratio_max", hi, "diagnostics")?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct FdllRow {
    s: f64,
    value: f64,
    exact: f64,
    rel_error: f64,
}

pub fn fdll_check(cfg: &ExperimentConfig, run: &mut RunDir) -> Result<(), RunError> {
    let f = &cfg.fdll;
    let quad = FdllQuadrature::new(f.r_min, f.r_max, f.nodes_per_decade).at("fdll")?;
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut w = run.csv("fdll.csv")?;
    for &s in &f.s_list {
        let value = fdll_reconstruct(s, &quad).at("fdll.s-list")?;
        let rel_error = (value * s - 1.0).abs();
        worst = worst.max(rel_error);
        w.serialize(FdllRow { s, value, exact: 1.0 / s, rel_error })?;
    }
    w.flush()?;
    log::info!("fdll reconstruction of {} separations in {:.1?}", f.s_list.len(), start.elapsed());
    run.metric(0.0, "fdll_max_rel_error", worst, "fdll")
}

fn wigner_range(cfg: &ExperimentConfig) -> WignerRange {
    match cfg.wigner.range {
        RangeCfg::Full => WignerRange::Full,
        RangeCfg::Local => WignerRange::Local,
    }
}

fn require_1d(grid: &Grid) -> Result<(), RunError> {
    if grid.dim() != 1 {
        return Err(config_err("grid.d", "phase-space runs are one-dimensional"));
    }
    Ok(())
}

/// `sum_j |<e_k, f_j>|^2` on plane waves `e_k = exp(i k x) / sqrt(L)`.
fn momentum_weight(set: &OrbitalSet, k: f64) -> f64 {
    let g = &set.grid;
    let h = g.spacing();
    let xs = g.coordinates();
    set.orbitals
        .iter()
        .map(|f| {
            let c: Complex64 = xs.iter().zip(f).map(|(&x, fx)| fx * Complex64::from_polar(1.0, -k * x)).sum();
            (c * h / g.length().sqrt()).norm_sqr()
        })
        .sum()
}

#[derive(Serialize)]
struct MarginalRow {
    x: f64,
    density: f64,
    marginal: f64,
}

pub fn wigner(cfg: &ExperimentConfig, run: &mut RunDir) -> Result<(), RunError> {
    let grid = cfg.make_grid()?;
    require_1d(&grid)?;
    let eps = cfg.eps();
    let set = initial_set(cfg, &grid, cfg.scaling.n_particles, eps)?;
    let w = wigner_transform_range(&set, cfg.wigner.nv, wigner_range(cfg)).at("wigner")?;
    let rho = set.density();
    let marginal = w.position_marginal();
    let scale = rho.iter().cloned().fold(0.0, f64::max);
    let pos_err = rho.iter().zip(&marginal).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale;
    let mut csv = run.csv("marginals.csv")?;
    for ((x, d), m) in grid.coordinates().iter().zip(&rho).zip(&marginal) {
        csv.serialize(MarginalRow { x: *x, density: *d, marginal: *m })?;
    }
    csv.flush()?;
    let kappa = 2.0 * PI / grid.length();
    let dv = w.dv();
    let vm = w.velocity_marginal();
    let mut vel_err = 0.0f64;
    for (l, v) in w.velocities.iter().enumerate() {
        let m = v / (eps * kappa);
        let expect = if (m - m.round()).abs() < 1e-9 { momentum_weight(&set, kappa * m.round()) } else { 0.0 };
        vel_err = vel_err.max((vm[l] * dv - expect).abs());
    }
    run.metric(0.0, "wigner_total", w.total(), "wigner")?;
    run.metric(0.0, "wigner_position_marginal_error", pos_err, "wigner")?;
    run.metric(0.0, "wigner_velocity_marginal_error", vel_err, "wigner")?;
    run.save_array("wigner.fmf", &FmfArray::real(vec![grid.n() as u64, w.nv() as u64], w.values.clone()).at("wigner")?)?;
    run.save_array("wigner_velocities.fmf", &FmfArray::real(vec![w.nv() as u64], w.velocities.clone()).at("wigner")?)?;
    Ok(())
}

/// `x / unit` when it is an integer to rounding accuracy.
fn whole_multiple(x: f64, unit: f64) -> Option<usize> {
    let k = (x / unit).round();
    ((k * unit - x).abs() <= 1e-9 * x.abs().max(unit) && k >= 1.0).then_some(k as usize)
}

#[derive(Serialize)]
struct VlasovRow {
    eps: f64,
    t: f64,
    l1: f64,
    l2: f64,
}

pub fn vlasov(cfg: &ExperimentConfig, run: &mut RunDir) -> Result<(), RunError> {
    let grid = cfg.make_grid()?;
    require_1d(&grid)?;
    let v = &cfg.vlasov;
    let e = &cfg.evolve;
    whole_multiple(e.t_final, v.sample_every)
        .ok_or_else(|| config_err("vlasov.sample-every", "T must be a whole number of sampling intervals"))?;
    let hf_stride = whole_multiple(v.sample_every, e.dt)
        .ok_or_else(|| config_err("vlasov.sample-every", "sampling interval must be a multiple of evolve.dt"))?;
    let vl_stride = whole_multiple(v.sample_every, v.dt)
        .ok_or_else(|| config_err("vlasov.sample-every", "sampling interval must be a multiple of vlasov.dt"))?;
    let pot = cfg.potential()?;
    let model = hf_model(cfg, &grid)?;
    let n = cfg.scaling.n_particles;
    let range = wigner_range(cfg);
    let nv = cfg.wigner.nv;
    let mut csv = run.csv("vlasov.csv")?;
    let mut sup = Vec::new();
    for &eps in &v.epsilons {
        let set = initial_set(cfg, &grid, n, eps)?;
        let mut hf: Vec<WignerField> = Vec::new();
        let mut times = Vec::new();
        let state = model.state(set, 0.0).at("init")?;
        evolve(&model, state, e.t_final, e.dt, hf_stride, &cfg.step_options(), &mut |s, obs| {
            hf.push(wigner_transform_range(&s.orbitals, nv, range)?);
            times.push(obs.t);
            Ok(())
        })
        .at("evolve")?;
        let mut solver = VlasovSolver::new(&grid, &pot, cfg.external(), n as f64).at("vlasov")?;
        solver.max_cfl = v.max_cfl;
        let vl: Vec<WignerField> =
            solver.evolve(&hf[0], e.t_final, v.dt, vl_stride).at("vlasov.max-cfl")?.into_iter().map(|s| s.field).collect();
        let dist = compare_hf_vlasov(&hf, &vl, &times).at("vlasov")?;
        let (mut s1, mut s2) = (0.0f64, 0.0f64);
        for d in &dist {
            csv.serialize(VlasovRow { eps, t: d.t, l1: d.l1, l2: d.l2 })?;
            s1 = s1.max(d.l1);
            s2 = s2.max(d.l2);
        }
        log::info!("eps = {eps}: sup L2 distance {s2:.3e}");
        sup.extend([eps, s1, s2]);
    }
    csv.flush()?;
    let arr = FmfArray::real(vec![v.epsilons.len() as u64, 3], sup).at("vlasov")?;
    run.metric_array(e.t_final, "hf_vlasov_sup", "hf_vlasov_sup.fmf", &arr, "vlasov")
}

#[derive(Serialize)]
struct BenchRow {
    lambda: f64,
    t: f64,
    hs: f64,
    trace: f64,
    hs_normalized: f64,
    trace_normalized: f64,
}

pub fn bench_exact(cfg: &ExperimentConfig, run: &mut RunDir) -> Result<(), RunError> {
    let b = &cfg.bench;
    let e = &cfg.evolve;
    let grid = make_grid(1, b.n, cfg.grid.length, Geometry::Torus).at("bench.n")?;
    let eps = cfg.eps();
    let ext = cfg.external();
    let base = cfg.potential()?;
    let set = initial_set(cfg, &grid, b.n_particles, eps)?;
    let psi0 = slater_wavefunction(&set).at("bench")?;
    let mut csv = run.csv("bench.csv")?;
    let mut sup = Vec::new();
    for &lambda in &b.coupling_lambda {
        let pot = base.scaled(lambda);
        let model = ManyBodyModel::new(&grid, b.n_particles, eps, &pot, &ext).at("bench")?;
        let mut gammas = Vec::new();
        model
            .evolve(psi0.clone(), e.t_final, e.dt, e.stride, &mut |t, psi| {
                gammas.push((t, reduced_density(psi)?.matrix));
                Ok(())
            })
            .at("bench")?;
        let hf = HfModel::new(&grid, &pot, ext, cfg.potential.exchange).at("bench")?;
        let mut omegas = Vec::new();
        evolve(&hf, hf.state(set.clone(), 0.0).at("bench")?, e.t_final, e.dt, e.stride, &cfg.step_options(), &mut |s, _| {
            omegas.push(s.orbitals.dense_projection());
            Ok(())
        })
        .at("evolve")?;
        if gammas.len() != omegas.len() {
            return Err(RunError::guard("bench", "exact and Hartree-Fock runs sampled different times"));
        }
        let mut worst = 0.0f64;
        for ((t, g), o) in gammas.iter().zip(&omegas) {
            let d = theorem_distances(g, o, b.n_particles).at("bench")?;
            worst = worst.max(d.hs_normalized);
            csv.serialize(BenchRow {
                lambda,
                t: *t,
                hs: d.hs,
                trace: d.trace,
                hs_normalized: d.hs_normalized,
                trace_normalized: d.trace_normalized,
            })?;
        }
        log::info!("lambda = {lambda}: sup ||gamma - omega||_HS / sqrt(N) = {worst:.3e}");
        sup.extend([lambda, worst]);
    }
    csv.flush()?;
    let arr = FmfArray::real(vec![b.coupling_lambda.len() as u64, 2], sup).at("bench")?;
    run.metric_array(e.t_final, "bench_sup_distance", "bench_sup_distance.fmf", &arr, "manybody")?;
    if let Some(t) = b.oracle_time {
        let dim = b.n.pow(b.n_particles as u32);
        if dim > 4096 {
            return Err(config_err("bench.oracle-time", format!("dense oracle needs n^N <= 4096 (got {dim})")));
        }
        let model = ManyBodyModel::new(&grid, b.n_particles, eps, &base, &ext).at("bench")?;
        let h = model.dense_hamiltonian().at("bench")?;
        let hc = h.map(|v| Complex64::new(v, 0.0));
        let exact = expm_hermitian_dense(&hc, t / eps) * DVector::from_column_slice(&psi0.values);
        let end = model.evolve(psi0.clone(), t, b.oracle_dt, usize::MAX, &mut |_, _| Ok(())).at("bench.oracle-dt")?;
        let err = end.values.iter().zip(exact.iter()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt() / exact.norm();
        run.metric(t, "bench_oracle_error", err, "manybody")?;
    }
    Ok(())
}

/// Plane waves `exp(i k x) / sqrt(L)` with `k = 2 pi / L * (-M/2 + 1 ..= M/2)`.
fn plane_wave_modes(grid: &Grid, m: usize, eps: f64) -> Result<OrbitalSet, RunError> {
    if m > grid.n() {
        return Err(config_err("fock.M", format!("M = {m} exceeds the grid size {}", grid.n())));
    }
    let kappa = 2.0 * PI / grid.length();
    let amp = 1.0 / grid.length().sqrt();
    let orbs = (0..m)
        .map(|i| {
            let k = kappa * (i as f64 - (m / 2) as f64 + 1.0);
            grid.coordinates().iter().map(|&x| Complex64::from_polar(amp, k * x)).collect()
        })
        .collect();
    OrbitalSet::new(*grid, eps, orbs).at("fock")
}

fn random_c(rng: &mut ChaCha8Rng) -> Complex64 {
    Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
}

fn random_unitary(m: usize, rng: &mut ChaCha8Rng) -> DMatrix<Complex64> {
    DMatrix::from_fn(m, m, |_, _| random_c(rng)).qr().q()
}

fn random_vector(basis: FockBasis, rng: &mut ChaCha8Rng) -> FockVector {
    let v: Vec<Complex64> = (0..basis.dim()).map(|_| random_c(rng)).collect();
    let n = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    FockVector::new(basis, v.into_iter().map(|x| x / n).collect()).expect("vector length matches basis")
}

fn vec_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
}

fn op_norm(m: &SparseMatrix) -> f64 {
    m.to_dense().svd(false, false).singular_values.iter().cloned().fold(0.0, f64::max)
}

#[derive(Serialize)]
struct FockRow {
    t: f64,
    excitations: f64,
    identity: f64,
    twisted: f64,
    norm: f64,
}

pub fn fock(cfg: &ExperimentConfig, run: &mut RunDir, seed: u64) -> Result<(), RunError> {
    let grid = cfg.make_grid()?;
    require_1d(&grid)?;
    let f = &cfg.fock;
    let e = &cfg.evolve;
    let eps = cfg.eps();
    let n = f.n_particles;
    let m = f.modes;
    let modes = plane_wave_modes(&grid, m, eps)?;
    let mb = mode_basis(&modes, &cfg.potential()?, &cfg.external()).at("fock")?;
    let mut hf = ModeHartreeFock::new(&mb, n);
    hf.exchange = cfg.potential.exchange;
    let ham = fock_hamiltonian(&mb.h, &mb.v, n, eps).at("fock")?;
    let basis = ham.operator.basis;
    let eig = mb.h.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let orbs = DMatrix::from_fn(m, n, |r, c| eig.eigenvectors[(r, order[c])]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let twist = Completion::Twisted(random_unitary(m - n, &mut rng));
    let start = Instant::now();
    let vac = FockVector::vacuum(basis);
    let a = fluctuation_evolution(&vac, &orbs, &hf, &ham, e.t_final, e.dt, e.stride, &Completion::Pivoted).at("fock")?;
    let b = fluctuation_evolution(&vac, &orbs, &hf, &ham, e.t_final, e.dt, e.stride, &twist).at("fock")?;
    log::info!("fluctuation runs (M = {m}, N = {n}) in {:.1?}", start.elapsed());
    let mut csv = run.csv("fock.csv")?;
    for (x, y) in a.iter().zip(&b) {
        csv.serialize(FockRow { t: x.t, excitations: x.excitations, identity: x.identity, twisted: y.excitations, norm: x.norm })?;
        run.metric(x.t, "excitations", x.excitations, "fock")?;
        run.metric(x.t, "excitation_identity_gap", (x.excitations - x.identity).abs(), "fock")?;
        run.metric(x.t, "completion_gap", (x.excitations - y.excitations).abs(), "fock")?;
        run.metric(x.t, "fluctuation_norm_error", (x.norm - 1.0).abs(), "fock")?;
    }
    csv.flush()?;
    if f.identity_checks {
        identity_checks(run, basis, &orbs, &mut rng)?;
    }
    if f.lemma_draws > 0 {
        let violations = lemma_suite(f.lemma_modes, f.lemma_draws, &mut rng)?;
        run.metric(0.0, "lemma_draws", f.lemma_draws as f64, "fock")?;
        run.metric(0.0, "lemma_violations", violations as f64, "fock")?;
    }
    Ok(())
}

fn identity_checks(
    run: &mut RunDir,
    basis: FockBasis,
    orbs: &DMatrix<Complex64>,
    rng: &mut ChaCha8Rng,
) -> Result<(), RunError> {
    let m = basis.modes();
    let n = orbs.ncols();
    let ops = car_ops(m).at("fock.M")?;
    let id = SparseMatrix::identity(basis.dim());
    let mut car = 0.0f64;
    for i in 0..m {
        for j in 0..m {
            let ac = ops.annihilation[i].anticommutator(&ops.creation[j]).matrix;
            let ac = if i == j { ac.add_scaled(&id, Complex64::new(-1.0, 0.0)) } else { ac };
            car = car.max(ac.max_abs());
            car = car.max(ops.annihilation[i].anticommutator(&ops.annihilation[j]).matrix.max_abs());
        }
    }
    run.metric(0.0, "car_error", car, "fock")?;
    let frame = ParticleHoleFrame::new(orbs).at("fock")?;
    let omega = orbs * orbs.adjoint();
    let u = DMatrix::<Complex64>::identity(m, m) - &omega;
    let mut bog = 0.0f64;
    for _ in 0..4 {
        let g: Vec<Complex64> = (0..m).map(|_| random_c(rng)).collect();
        let ug: Vec<Complex64> = (&u * DVector::from_column_slice(&g)).iter().copied().collect();
        let mut vg = vec![Complex64::new(0.0, 0.0); m];
        for j in 0..n {
            let c: Complex64 = (0..m).map(|x| g[x].conj() * orbs[(x, j)]).sum();
            for x in 0..m {
                vg[x] += c * orbs[(x, j)];
            }
        }
        let psi = random_vector(basis, rng);
        let lhs = frame.apply_adjoint(&annihilation_of(basis, &g).at("fock")?.apply(&frame.apply(&psi)));
        let rhs_a = annihilation_of(basis, &ug).at("fock")?.apply(&psi);
        let rhs_b = creation_of(basis, &vg).at("fock")?.apply(&psi);
        let rhs: Vec<Complex64> = rhs_a.values.iter().zip(&rhs_b.values).map(|(x, y)| x + y).collect();
        bog = bog.max(vec_diff(&lhs.values, &rhs));
    }
    run.metric(0.0, "bog_error", bog, "fock")?;
    let vac = frame.apply(&FockVector::vacuum(basis));
    let slater = slater_state(basis, orbs).at("fock")?;
    let overlap = slater.inner(&vac);
    let phase = overlap / overlap.norm();
    let aligned: Vec<Complex64> = slater.values.iter().map(|v| v * phase).collect();
    run.metric(0.0, "slater_error", vec_diff(&aligned, &vac.values), "fock")?;
    let mut ident = 0.0f64;
    for _ in 0..8 {
        let psi = random_vector(basis, rng);
        let lhs = excitation_number(&frame, &psi);
        let rhs = excitation_identity(&reduced_density_fock(&psi), &omega, n, 1.0);
        ident = ident.max((lhs - rhs).abs());
    }
    run.metric(0.0, "identity_error", ident, "fock")
}

/// Randomized checks of the second-quantized bounds on `m` modes; returns the violation count.
fn lemma_suite(m: usize, draws: usize, rng: &mut ChaCha8Rng) -> Result<usize, RunError> {
    let basis = FockBasis::new(m).at("fock.lemma-modes")?;
    let norm = |v: &[Complex64]| v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    let mut violations = 0;
    for _ in 0..draws {
        let j = DMatrix::from_fn(m, m, |_, _| random_c(rng));
        let psi = random_vector(basis, rng);
        let sv: Vec<f64> = j.clone().svd(false, false).singular_values.iter().copied().collect();
        let op = sv.iter().cloned().fold(0.0, f64::max);
        let hs = sv.iter().map(|s| s * s).sum::<f64>().sqrt();
        let tr: f64 = sv.iter().sum();
        let dpsi = dgamma(basis, &j).at("fock")?.apply(&psi);
        let weighted = |power: f64| -> Vec<Complex64> {
            psi.values.iter().enumerate().map(|(s, v)| v * (s.count_ones() as f64).powf(power)).collect()
        };
        let n_half = norm(&weighted(0.5));
        let n_full = norm(&weighted(1.0));
        let tol = 1e-12;
        let pair = pair_annihilation(basis, &j).at("fock")?;
        let checks = [
            psi.inner(&dpsi).norm() <= op * psi.number_expectation() + tol,
            dpsi.norm() <= op * n_full + tol,
            dpsi.norm() <= hs * n_half + tol,
            pair.apply(&psi).norm() <= hs * n_half + tol,
            op_norm(&pair.matrix) <= 2.0 * tr + tol,
        ];
        violations += checks.iter().filter(|ok| !**ok).count();
    }
    Ok(violations)
}
