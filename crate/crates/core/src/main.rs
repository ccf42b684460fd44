use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sparsedom::harness::{run_with_workers, write_report, Experiment, ExperimentConfig};

/// Sparse-domination experiments on sampled periodic signals.
///
/// Every subcommand reads an optional JSON config; missing fields take their
/// defaults (N = 1024, trig signal with max frequency 16 on [0, 1/2), seed 1,
/// periodic Hilbert kernel, frequencies -32..=32, alpha = 3, r = 2,
/// s = max(2, r'), p = 2, threshold "auto", c0 = 4, 4 trials, t-grid of 24
/// geometric points in [0.5, 24]).
#[derive(Debug, Parser)]
#[command(name = "sparsedom", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (created if missing); overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Report format: csv, json or both.
    #[arg(long, global = true)]
    format: Option<String>,

    /// Seed for signal generation and probes; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Level-set decay of T^F_* f / M_r f with an exponential fit.
    Decay,
    /// Recursive sparse domination with constant calibration.
    Dominate,
    /// Pointwise grand-sharp bound against kappa * M_{r'} f.
    SharpCheck,
    /// Hörmander constants of the configured kernel.
    Kappa,
    /// Median-oscillation decomposition and its pointwise bound.
    Lerner,
    /// Invariant suites of every module at fixed seeds.
    Selftest,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(path) => match ExperimentConfig::load(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(1);
            }
        },
        None => ExperimentConfig::default(),
    };
    cfg.experiment = match cli.command {
        Command::Decay => Experiment::Decay,
        Command::Dominate => Experiment::Dominate,
        Command::SharpCheck => Experiment::SharpCheck,
        Command::Kappa => Experiment::Kappa,
        Command::Lerner => Experiment::Lerner,
        Command::Selftest => Experiment::Selftest,
    };
    if let Some(seed) = cli.seed {
        cfg.signal.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.output.path = out;
    }
    if let Some(format) = cli.format {
        cfg.output.format = format;
    }
    let workers = cli.workers.or(cfg.workers);

    let report = match run_with_workers(&cfg, workers) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    if let Err(e) = std::fs::create_dir_all(&cfg.output.path) {
        eprintln!("error: {}: {e}", cfg.output.path.display());
        return ExitCode::from(1);
    }
    match write_report(&report, &cfg.output.path, &cfg.output.format) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    if cfg.experiment == Experiment::Selftest && report.json["passed"] != serde_json::Value::Bool(true) {
        for f in report.json["failures"].as_array().into_iter().flatten() {
            eprintln!(
                "FAIL {}/{}: {}",
                f["module"].as_str().unwrap_or("?"),
                f["invariant"].as_str().unwrap_or("?"),
                f["witness"].as_str().unwrap_or("")
            );
        }
        return ExitCode::from(3);
    }
    ExitCode::SUCCESS
}
