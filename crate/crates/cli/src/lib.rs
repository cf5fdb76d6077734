//! Experiment runner for the `fermimf` numerical core.
//!
//! Each subcommand reads an [`ExperimentConfig`], writes a run directory with
//! `manifest.json`, `metrics.jsonl`, FMF1 arrays and CSV tables, and maps
//! failures onto stable exit codes: 0 success, 1 i/o, 2 configuration,
//! 3 numerical guard.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod report;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use config::ExperimentConfig;
pub use error::RunError;
pub use output::{read_metrics, Manifest, MetricValue, MetricsRecord, METRICS};

#[derive(Debug, Parser)]
#[command(name = "fermimf", version, about = "Semiclassical Hartree-Fock experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub opts: GlobalOpts,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalOpts {
    /// TOML config, or a manifest.json from an earlier run.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; falls back to FERMIMF_THREADS.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum RunKind {
    /// Generate initial orbitals.
    Init,
    /// Propagate the Hartree-Fock equation.
    Evolve,
    /// Commutator scans and trace-norm bound checks.
    Diagnose,
    /// Check the scale decomposition of the Coulomb kernel.
    FdllCheck,
    /// Wigner transform of the initial data.
    Wigner,
    /// Hartree-Fock against Vlasov transport.
    Vlasov,
    /// Exact many-body evolution against Hartree-Fock.
    BenchExact,
    /// Fock-space fluctuation dynamics.
    Fock,
}

impl RunKind {
    pub fn name(&self) -> &'static str {
        match self {
            RunKind::Init => "init",
            RunKind::Evolve => "evolve",
            RunKind::Diagnose => "diagnose",
            RunKind::FdllCheck => "fdll-check",
            RunKind::Wigner => "wigner",
            RunKind::Vlasov => "vlasov",
            RunKind::BenchExact => "bench-exact",
            RunKind::Fock => "fock",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    #[command(flatten)]
    Run(RunKind),
    /// Aggregate run directories into cross-run tables.
    Report {
        runs: Vec<PathBuf>,
    },
}

/// Thread count from the flag, then `FERMIMF_THREADS`, then rayon's default.
pub fn thread_count(flag: Option<usize>) -> Result<Option<usize>, RunError> {
    if let Some(k) = flag {
        return Ok(Some(k));
    }
    match std::env::var("FERMIMF_THREADS") {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| RunError::Config {
            path: "FERMIMF_THREADS".into(),
            message: format!("not a thread count: '{v}'"),
        }),
        Err(_) => Ok(None),
    }
}

fn with_threads<T>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, RunError>
where
    T: Send,
{
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(k) = threads {
        if k == 0 {
            return Err(RunError::Config { path: "--threads".into(), message: "need at least one thread".into() });
        }
        builder = builder.num_threads(k);
    }
    let pool = builder.build().map_err(|e| RunError::Io(e.to_string()))?;
    Ok(pool.install(f))
}

/// Runs one subcommand on a resolved config and returns the run directory.
pub fn execute(kind: RunKind, cfg: ExperimentConfig, out: &Path, seed: u64, threads: Option<usize>) -> Result<PathBuf, RunError> {
    let cfg = cfg.resolve()?;
    with_threads(threads, || {
        let mut run = output::RunDir::create(out, kind.name(), &cfg, seed)?;
        log::info!("{} run {} -> {}", kind.name(), run.run_id, out.display());
        match kind {
            RunKind::Init => commands::init(&cfg, &mut run),
            RunKind::Evolve => commands::evolve_cmd(&cfg, &mut run),
            RunKind::Diagnose => commands::diagnose(&cfg, &mut run),
            RunKind::FdllCheck => commands::fdll_check(&cfg, &mut run),
            RunKind::Wigner => commands::wigner(&cfg, &mut run),
            RunKind::Vlasov => commands::vlasov(&cfg, &mut run),
            RunKind::BenchExact => commands::bench_exact(&cfg, &mut run),
            RunKind::Fock => commands::fock(&cfg, &mut run, seed),
        }?;
        run.finish()
    })?
}

/// Entry point shared by the binary and the tests.
pub fn run_cli(cli: Cli) -> Result<(), RunError> {
    let opts = cli.opts;
    match cli.command {
        Command::Report { runs } => {
            let out = opts.out.ok_or_else(|| RunError::Config { path: "--out".into(), message: "report needs --out".into() })?;
            let summary = report::report(&runs, &out)?;
            log::info!("report over {} runs written to {}", summary.runs, out.display());
            Ok(())
        }
        Command::Run(kind) => {
            let cfg = match &opts.config {
                Some(p) => ExperimentConfig::load(p)?,
                None => ExperimentConfig::from_toml("")?,
            };
            let out = opts
                .out
                .clone()
                .or_else(|| cfg.output.dir.as_ref().map(PathBuf::from))
                .ok_or_else(|| RunError::Config { path: "output.dir".into(), message: "no output directory (set output.dir or --out)".into() })?;
            let threads = thread_count(opts.threads)?;
            execute(kind, cfg, &out, opts.seed, threads)?;
            Ok(())
        }
    }
}
