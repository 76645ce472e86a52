//! `fermigap`: spectra, decay constants, gap scans and verification suites for
//! weakly interacting lattice fermions.
//!
//! Exit codes: 0 success, 1 failed assertion or numerical error, 2 configuration error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fermigap::par::Execution;

use commands::{Context, Failure};
use config::ModelConfig;

#[derive(Debug, Parser)]
#[command(name = "fermigap", version, about = "Gap persistence laboratory for lattice fermions")]
struct Cli {
    /// Model configuration (TOML); defaults describe a gapped two-site chain.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides `run.output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true, default_value_t = 20240917)]
    seed: u64,

    /// Verification suite for `verify`.
    #[arg(long, global = true, default_value = "all")]
    suite: String,

    /// Worker threads for the data-parallel paths.
    #[arg(long, global = true, env = "FERMIGAP_THREADS")]
    threads: Option<usize>,

    /// Run every batch on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// One-body and many-body spectra at the configured coupling.
    Spectrum,
    /// Decay constant alpha_rho for each beta in `run.beta`.
    Alpha,
    /// Ground-state gap over `run.g_grid`, certified by continuation when `run.certify`.
    GapScan,
    /// Run a named verification suite (`--suite`).
    Verify,
    /// Spectrum, alpha, gap scan, correlations and the Trotter study together.
    Report,
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let config = match &cli.config {
        Some(p) => ModelConfig::load(p)?,
        None => ModelConfig::default(),
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Config(config::ConfigError {
                path: "--threads".into(),
                reason: "must be at least 1".into(),
            }));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(e.into()))?;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| config.run.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("fermigap-out"));
    std::fs::create_dir_all(&out).map_err(|e| Failure::Runtime(e.into()))?;
    let ctx = Context {
        config,
        out,
        seed: cli.seed,
        exec: if cli.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        },
    };
    match cli.command {
        Command::Spectrum => commands::spectrum(&ctx).map(drop),
        Command::Alpha => commands::alpha(&ctx).map(drop),
        Command::GapScan => commands::gap_scan_cmd(&ctx).map(drop),
        Command::Verify => commands::verify(&ctx, &cli.suite).map(drop),
        Command::Report => commands::report(&ctx).map(drop),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Assertion(names)) => {
            for n in &names {
                eprintln!("assertion failed: {n}");
            }
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
