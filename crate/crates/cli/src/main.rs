mod commands;
mod config;
mod output;
mod sweep;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::ConfigError;

/// Exit codes.
pub const EXIT_OK: u8 = 0;
pub const EXIT_UNSTABLE: u8 = 1;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug)]
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    pub fn unstable(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_UNSTABLE,
            message: message.into(),
        }
    }

    pub fn input(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_NUMERICAL,
            message: message.into(),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::input(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::input(format!("output: {e}"))
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalFlags {
    /// Convergence tolerance of the rate-matrix iteration.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Iteration cap of the rate-matrix iteration.
    #[arg(long = "max-iter", global = true)]
    pub max_iter: Option<usize>,
    /// Fixed truncation level of the confirmation-time chain.
    #[arg(long = "trunc-k", global = true)]
    pub trunc_k: Option<usize>,
    /// Simulation seed, overriding the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Skip block capacities above 100 in sweeps.
    #[arg(long, global = true)]
    pub fast: bool,
    /// Fill the wallclock column (makes output run-dependent).
    #[arg(long, global = true)]
    pub timing: bool,
}

#[derive(Debug, Parser)]
#[command(name = "blockqueue", version, about = "Batch-service queue solver and simulator for block confirmation")]
struct Cli {
    #[command(flatten)]
    flags: GlobalFlags,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a model config and report its stability.
    Validate { config: PathBuf },
    /// Solve a model analytically and write one CSV row.
    Solve {
        config: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Simulate a model and write estimates with standard errors.
    Simulate {
        config: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Solve a grid of models and write one CSV row per point.
    Sweep {
        sweep: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("BLOCKQUEUE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::input(format!("BLOCKQUEUE_THREADS: expected a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::numerical(e.to_string()))
}

fn run(cli: Cli) -> Result<i32, CliError> {
    configure_threads()?;
    if let Some(t) = cli.flags.tol {
        if !(t.is_finite() && t > 0.0) {
            return Err(CliError::input("--tol must be positive"));
        }
    }
    match &cli.command {
        Command::Validate { config } => commands::validate(config),
        Command::Solve { config, output } => commands::solve(config, output.as_deref(), &cli.flags),
        Command::Simulate { config, output } => commands::simulation(config, output.as_deref(), &cli.flags),
        Command::Sweep { sweep, output } => sweep::sweep(sweep, output.as_deref(), &cli.flags),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
