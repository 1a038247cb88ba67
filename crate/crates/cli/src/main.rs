//! Batch front-end for fusion estimator synthesis, privacy calibration, and
//! Monte Carlo verification.
//!
//! Exit codes: 0 success, 1 domain failure (rejected model, failed privacy
//! verdict, solver failure), 2 usage or configuration parse error.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{CliOverrides, ResolvedConfig};

/// Application-level error carrying the exit-code class.
#[derive(Debug)]
pub enum AppError {
    /// Usage/parse problems → exit 2.
    Usage(String),
    /// Domain failures → exit 1.
    Domain(String),
}

impl AppError {
    pub fn usage(msg: impl Into<String>) -> Self {
        AppError::Usage(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        AppError::Domain(msg.into())
    }

    pub fn domain_from(e: ldpfuse_core::Error) -> Self {
        AppError::Domain(e.to_string())
    }

    fn exit_code(&self) -> u8 {
        match self {
            AppError::Usage(_) => 2,
            AppError::Domain(_) => 1,
        }
    }
}

impl std::fmt::Display for AppError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AppError::Usage(m) | AppError::Domain(m) => write!(f, "{m}"),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "ldpfuse",
    version,
    about = "Steady-state multi-sensor fusion estimation with locally differentially private release"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Scenario configuration file (TOML; see docs/config.md).
    #[arg(long)]
    config: PathBuf,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Monte Carlo run-count override.
    #[arg(long)]
    runs: Option<usize>,
    /// Simulation horizon override.
    #[arg(long)]
    horizon: Option<usize>,
    /// Worker thread cap (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Check controllability, observability, and noise covariances.
    Validate(CommonArgs),
    /// Compute the sensitivity profile and calibrate the release mechanism.
    Calibrate(CommonArgs),
    /// Run the seeded Monte Carlo experiment and emit RMSE series.
    Simulate(CommonArgs),
    /// Measure empirical privacy-loss exceedance fractions.
    #[command(name = "privacy-check")]
    PrivacyCheck(CommonArgs),
    /// Aggregate prior outputs into one summary document.
    Report(CommonArgs),
}

impl Command {
    fn args(&self) -> &CommonArgs {
        match self {
            Command::Validate(a)
            | Command::Calibrate(a)
            | Command::Simulate(a)
            | Command::PrivacyCheck(a)
            | Command::Report(a) => a,
        }
    }
}

fn run(cli: Cli) -> Result<i32, AppError> {
    let args = cli.command.args();
    let overrides = CliOverrides {
        seed: args.seed,
        runs: args.runs,
        horizon: args.horizon,
        threads: args.threads,
        out: args.out.as_ref().map(|p| p.display().to_string()),
    };
    let cfg = ResolvedConfig::load(&args.config, overrides)?;

    let threads = cfg.threads();
    if threads > 0 {
        // Ignore the error if a global pool already exists (tests).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }

    match cli.command {
        Command::Validate(_) => commands::cmd_validate(&cfg),
        Command::Calibrate(_) => commands::cmd_calibrate(&cfg),
        Command::Simulate(_) => commands::cmd_simulate(&cfg),
        Command::PrivacyCheck(_) => commands::cmd_privacy_check(&cfg),
        Command::Report(_) => commands::cmd_report(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
