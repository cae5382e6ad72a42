//! The `fpaci` command-line front end.
//!
//! Exit codes: 0 success, 1 usage, 2 I/O, 3 numerical (non-convergence or
//! a failed acceptance criterion).

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

pub mod acceptance;
mod commands;
mod config;
mod plot;

pub use commands::{
    cmd_calibrate, cmd_measure, cmd_reconstruct, cmd_run, cmd_simulate, signal_rms, CalibOutcome, RunOutcome,
};
pub use config::{CalibSource, ExperimentConfig, Method, PhantomSource, Stage, SystemSource};

#[derive(Debug, Parser)]
#[command(name = "fpaci", version, about = "Focal-plane-array compressive imaging experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, Default, clap::Args)]
pub struct Flags {
    /// `key=value` experiment file; flags override it.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Calibration scan size for `calibrate`, Hadamard mask count otherwise.
    #[arg(long, global = true, value_name = "N")]
    pub masks: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub method: Option<Method>,
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "F")]
    pub tau: Option<f64>,
    /// Fidelity weight for the stage being run.
    #[arg(long, global = true, value_name = "F")]
    pub mu: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Write the system model and its ground-truth calibration matrix.
    Simulate,
    /// Estimate the calibration matrix and compare it with the truth.
    Calibrate,
    /// Simulate Hadamard-coded frames of the phantom.
    Measure,
    /// Reconstruct from a measurement directory and a calibration file.
    Reconstruct,
    /// Measure, reconstruct and evaluate in one go.
    Run,
    /// Run the acceptance suite.
    Acceptance,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] fpaci_core::Error),
    #[error("solver did not converge within {0} iterations")]
    NotConverged(usize),
    #[error("{0} acceptance criteria failed")]
    Acceptance(usize),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use fpaci_core::Error as E;
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(E::InvalidArgument(_)) => 1,
            CliError::Core(E::NotFound(_) | E::Io { .. } | E::Format { .. }) => 2,
            CliError::Core(E::DegenerateNormalization(_) | E::Protocol(_)) => 3,
            CliError::NotConverged(_) | CliError::Acceptance(_) => 3,
        }
    }
}

/// Caps the worker pool at `FPACI_THREADS` when set.
pub fn init_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("FPACI_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("FPACI_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot size the thread pool: {e}")))
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let stage = match cli.command {
        Command::Calibrate => Stage::Calibrate,
        _ => Stage::Image,
    };
    if cli.command == Command::Acceptance {
        let results = acceptance::run_suite(&acceptance::Tolerances::default(), None);
        for r in &results {
            println!("{}", r.line());
        }
        let failed = results.iter().filter(|r| !r.pass).count();
        println!("summary: {} passed, {failed} failed", results.len() - failed);
        return if failed == 0 { Ok(()) } else { Err(CliError::Acceptance(failed)) };
    }
    let cfg = ExperimentConfig::load(&cli.flags, stage)?;
    match cli.command {
        Command::Simulate => cmd_simulate(&cfg).map(|_| ()),
        Command::Calibrate => cmd_calibrate(&cfg).map(|_| ()),
        Command::Measure => cmd_measure(&cfg).map(|_| ()),
        Command::Reconstruct => cmd_reconstruct(&cfg).and_then(|o| o.check_converged()),
        Command::Run => cmd_run(&cfg).and_then(|o| o.check_converged()),
        Command::Acceptance => unreachable!(),
    }
}
