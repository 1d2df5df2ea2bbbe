//! Batch driver: `hotspots <command> --config scenario.json --out dir`.
//!
//! Exit codes: 0 when every executed check passes, 2 when a check fails,
//! 1 on configuration or runtime errors.

pub mod commands;
pub mod config;
pub mod plot;

use std::io;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::branching::BranchingError;
use crate::geometry::GeometryError;
use crate::pde::PdeError;
use crate::reflected_motion::MotionError;
use crate::verify::VerifyError;
pub use commands::{run_command, Command, Context, Outcome};
pub use config::Scenario;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("geometry: {0}")]
    Geometry(#[from] GeometryError),
    #[error("reflected_motion: {0}")]
    Motion(#[from] MotionError),
    #[error("branching: {0}")]
    Branching(#[from] BranchingError),
    #[error(transparent)]
    Pde(#[from] PdeError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error("io: {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("runtime: {0}")]
    Runtime(String),
}

impl CliError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }
}

#[derive(Debug, Parser)]
#[command(name = "hotspots", version, about = "Gradient-cone monotonicity laboratory for semilinear Neumann problems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CommandArg,
    /// Scenario JSON document.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `output_dir` in the scenario).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; 0 picks the number of cores.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[arg(long, global = true)]
    pub verbose: bool,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum CommandArg {
    /// Solve the PDE and dump fields, mesh and transects.
    Solve,
    /// Coupled reflected pairs and their monitors.
    Couple,
    /// Coupled branching runs and the pathwise domination check.
    Branch,
    /// Particle estimate of the log-Laplace functional against the PDE.
    Duality,
    /// Solve, then check the gradient cone and monotonicity along lines.
    Cone,
    /// Stable-tail constant and total-mass Laplace transform checks.
    Calibrate,
    /// Every command in turn.
    All,
}

impl From<CommandArg> for Command {
    fn from(c: CommandArg) -> Self {
        match c {
            CommandArg::Solve => Command::Solve,
            CommandArg::Couple => Command::Couple,
            CommandArg::Branch => Command::Branch,
            CommandArg::Duality => Command::Duality,
            CommandArg::Cone => Command::Cone,
            CommandArg::Calibrate => Command::Calibrate,
            CommandArg::All => Command::All,
        }
    }
}

/// Run a parsed command line and return the process exit code.
pub fn run(cli: &Cli) -> i32 {
    match execute(cli) {
        Ok(outcomes) => {
            for o in &outcomes {
                println!("{}: {} ({})", o.command, if o.pass { "pass" } else { "FAIL" }, o.report_path.display());
            }
            if outcomes.iter().all(|o| o.pass) {
                0
            } else {
                2
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn execute(cli: &Cli) -> Result<Vec<Outcome>, CliError> {
    let config = cli.config.as_ref().ok_or_else(|| CliError::Config("--config <path> is required".into()))?;
    let scenario = Scenario::load(config)?;
    let out = cli
        .out
        .clone()
        .or_else(|| scenario.output_dir.clone())
        .ok_or_else(|| CliError::Config("no output directory: pass --out or set output_dir".into()))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let ctx = Context { scenario: &scenario, out: &out, verbose: cli.verbose };
    pool.install(|| run_command(&ctx, cli.command.into()))
}
