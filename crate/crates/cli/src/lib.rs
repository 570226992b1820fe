//! Command-line driver: `solve`, `verify` and `reproduce`.
//!
//! Every run writes into one directory with a fixed layout (`solution/`,
//! `reports/`, `plots/`, `manifest.json`). Exit codes are a stable contract:
//! 0 success, 1 input error, 2 solver failure, 3 verification failure.

mod manifest;
mod reproduce;
mod solve;
mod verify;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

pub use manifest::{sha256_hex, OutputEntry, RunDir, RunManifest};
pub use reproduce::{cmd_reproduce, counterexample_params, mean_variance_params, regulator_params};
pub use solve::{cmd_solve, problem_hash};
pub use verify::cmd_verify;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_SOLVER: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

/// Seed used when `--seed` is not given.
pub const DEFAULT_SEED: u64 = 7;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("config {file}: {source}")]
    Config {
        file: String,
        source: tilq::ConfigError,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("solver failed: {0}")]
    Solver(String),
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) | CliError::Config { .. } | CliError::Io { .. } => EXIT_INPUT,
            CliError::Solver(_) => EXIT_SOLVER,
            CliError::Verification(_) => EXIT_VERIFY,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "tilq",
    version,
    about = "Equilibrium controls for time-inconsistent LQ problems with jumps"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the flow system of a configured problem.
    Solve(SolveArgs),
    /// Check a solved law by the first- and second-order conditions and spike variation.
    Verify(VerifyArgs),
    /// Run a packaged example end to end.
    Reproduce(ReproduceArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SolverKind {
    Marching,
    Picard,
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    /// Problem configuration (TOML or JSON).
    pub config: PathBuf,
    #[arg(long, value_enum, default_value = "marching")]
    pub solver: SolverKind,
    /// Weight of the Picard norm.
    #[arg(long, default_value_t = 10.0)]
    pub beta: f64,
    /// Picard stopping tolerance.
    #[arg(long, default_value_t = 1e-12)]
    pub tol: f64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    pub config: PathBuf,
    /// Output directory of `solve`, or its `solution/` subdirectory.
    pub solution: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    pub paths: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Spike widths, each a multiple of h; defaults to h, 2h, 4h, 8h.
    #[arg(long, value_delimiter = ',')]
    pub eps_ladder: Option<Vec<f64>>,
    /// Grid nodes to test; defaults to five evenly spaced interior nodes.
    #[arg(long, value_delimiter = ',')]
    pub nodes: Option<Vec<usize>>,
    /// Defaults to `<solution>/verify`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DiscountKind {
    Constant,
    Hyperbolic,
}

#[derive(Debug, Clone, Args)]
pub struct ReproduceArgs {
    /// One of `mean-variance`, `regulator`, `counterexample`.
    pub name: String,
    /// Grid steps; each example has its own default.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, default_value_t = 4_000)]
    pub paths: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Discount of the regulator example.
    #[arg(long, value_enum, default_value = "hyperbolic")]
    pub h: DiscountKind,
    #[arg(long, default_value_t = 1.0)]
    pub kappa: f64,
    /// Defaults to `reproduce/<name>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Runs a parsed command, reporting failures on stderr; returns the exit code.
pub fn run(cli: Cli) -> i32 {
    let res = match cli.command {
        Command::Solve(a) => cmd_solve(&a),
        Command::Verify(a) => cmd_verify(&a),
        Command::Reproduce(a) => cmd_reproduce(&a),
    };
    match res {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub(crate) fn read_text(path: &std::path::Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads and samples a configuration; parse and shape errors name the key.
pub fn load_problem(path: &std::path::Path) -> CliResult<tilq::Problem> {
    let text = read_text(path)?;
    let file = path.display().to_string();
    let doc = tilq::model::parse_document(&text).map_err(|source| CliError::Config {
        file: file.clone(),
        source,
    })?;
    tilq::build_problem(&doc).map_err(|source| CliError::Config { file, source })
}
