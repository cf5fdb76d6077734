//! Cross-run tables.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::RunError;
use crate::output::{read_metrics, Manifest, MetricValue};

struct Loaded {
    dir: PathBuf,
    manifest: Manifest,
    config: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub runs: usize,
    /// Spread `max - min` of the sup scan ratio across runs, per weight.
    pub scan_ratio_spread: BTreeMap<String, f64>,
    /// Whether every distance column is nondecreasing in the coupling.
    pub bench_monotone: Option<bool>,
    pub fock_runs: usize,
}

#[derive(Serialize)]
struct ScanReportRow {
    run_id: String,
    n_particles: usize,
    epsilon: f64,
    weight: String,
    sup_ratio: f64,
}

#[derive(Deserialize)]
struct BenchCsvRow {
    lambda: f64,
    t: f64,
    hs_normalized: f64,
    trace_normalized: f64,
}

#[derive(Serialize)]
struct BenchReportRow {
    run_id: String,
    lambda: f64,
    t: f64,
    hs_normalized: f64,
    trace_normalized: f64,
}

#[derive(Deserialize)]
struct FockCsvRow {
    t: f64,
    excitations: f64,
}

#[derive(Serialize)]
struct FockReportRow {
    run_id: String,
    modes: usize,
    n_particles: usize,
    t: f64,
    excitations: f64,
}

fn incompatible(a: &Loaded, b: &Loaded, what: &str) -> RunError {
    RunError::Config {
        path: "runs".into(),
        message: format!("incompatible {what}: {} and {}", a.dir.display(), b.dir.display()),
    }
}

/// Checks that all runs agree on `key`.
fn check_same<K: PartialEq>(runs: &[&Loaded], what: &str, key: impl Fn(&Loaded) -> K) -> Result<(), RunError> {
    if let Some(first) = runs.first() {
        let k0 = key(first);
        if let Some(bad) = runs.iter().find(|r| key(r) != k0) {
            return Err(incompatible(first, bad, what));
        }
    }
    Ok(())
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, RunError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| RunError::Io(format!("{}: {e}", path.display())))?;
    Ok(r.deserialize().collect::<Result<Vec<T>, _>>()?)
}

pub fn report(runs: &[PathBuf], out: &Path) -> Result<ReportSummary, RunError> {
    if runs.is_empty() {
        return Err(RunError::Config { path: "runs".into(), message: "no run directories given".into() });
    }
    let loaded: Vec<Loaded> = runs
        .iter()
        .map(|dir| {
            let manifest = Manifest::load(dir)?;
            let config = manifest.experiment()?;
            Ok(Loaded { dir: dir.clone(), manifest, config })
        })
        .collect::<Result<_, RunError>>()?;
    std::fs::create_dir_all(out)?;
    let of = |sub: &str| loaded.iter().filter(|l| l.manifest.subcommand == sub).collect::<Vec<_>>();

    let diag = of("diagnose");
    check_same(&diag, "grids", |l| l.config.grid.clone())?;
    let mut spread: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    let mut scan_rows = Vec::new();
    for l in &diag {
        let mut sup: BTreeMap<String, f64> = BTreeMap::new();
        for rec in read_metrics(&l.dir)? {
            if let (Some(w), MetricValue::Scalar(v)) = (rec.name.strip_prefix("scan_ratio_"), &rec.value) {
                let e = sup.entry(w.to_string()).or_insert(0.0);
                *e = e.max(*v);
            }
        }
        for (w, v) in sup {
            let s = spread.entry(w.clone()).or_insert((f64::INFINITY, f64::NEG_INFINITY));
            s.0 = s.0.min(v);
            s.1 = s.1.max(v);
            scan_rows.push(ScanReportRow {
                run_id: l.manifest.run_id.clone(),
                n_particles: l.config.scaling.n_particles,
                epsilon: l.config.eps(),
                weight: w,
                sup_ratio: v,
            });
        }
    }
    if !scan_rows.is_empty() {
        scan_rows.sort_by(|a, b| (a.weight.as_str(), a.n_particles).cmp(&(b.weight.as_str(), b.n_particles)));
        let mut w = csv::Writer::from_path(out.join("report_scan.csv"))?;
        for r in &scan_rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }

    let bench = of("bench-exact");
    check_same(&bench, "bench grids", |l| (l.config.bench.n, l.config.grid.length, l.config.bench.n_particles, l.config.eps()))?;
    let mut bench_rows = Vec::new();
    for l in &bench {
        for r in read_csv::<BenchCsvRow>(&l.dir.join("bench.csv"))? {
            bench_rows.push(BenchReportRow {
                run_id: l.manifest.run_id.clone(),
                lambda: r.lambda,
                t: r.t,
                hs_normalized: r.hs_normalized,
                trace_normalized: r.trace_normalized,
            });
        }
    }
    let bench_monotone = if bench_rows.is_empty() {
        None
    } else {
        bench_rows.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.lambda.total_cmp(&b.lambda)));
        let mut w = csv::Writer::from_path(out.join("report_bench.csv"))?;
        for r in &bench_rows {
            w.serialize(r)?;
        }
        w.flush()?;
        let ok = bench_rows.windows(2).all(|p| {
            p[0].t != p[1].t
                || (p[1].hs_normalized >= p[0].hs_normalized - 1e-12
                    && p[1].trace_normalized >= p[0].trace_normalized - 1e-12)
        });
        Some(ok)
    };

    let fock = of("fock");
    check_same(&fock, "mode bases", |l| (l.config.grid.clone(), l.config.fock.modes))?;
    if !fock.is_empty() {
        let mut w = csv::Writer::from_path(out.join("report_fock.csv"))?;
        for l in &fock {
            for r in read_csv::<FockCsvRow>(&l.dir.join("fock.csv"))? {
                w.serialize(FockReportRow {
                    run_id: l.manifest.run_id.clone(),
                    modes: l.config.fock.modes,
                    n_particles: l.config.fock.n_particles,
                    t: r.t,
                    excitations: r.excitations,
                })?;
            }
        }
        w.flush()?;
    }

    let summary = ReportSummary {
        runs: loaded.len(),
        scan_ratio_spread: spread.into_iter().map(|(k, (lo, hi))| (k, hi - lo)).collect(),
        bench_monotone,
        fock_runs: fock.len(),
    };
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    std::fs::write(out.join("report.json"), text)?;
    Ok(summary)
}
