//! Library half of the `diprivacy` binary, so the commands can be driven
//! from tests.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

use diprivacy::data::DataError;
use diprivacy::harness::HarnessError;
use diprivacy::privmech::MechError;

pub use commands::{run, Summary};
pub use config::{FileConfig, Overrides, RunConfig};

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("{0}")]
    Divergence(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Data(_) => EXIT_DATA,
            CliError::Divergence(_) => EXIT_DIVERGENCE,
            CliError::Other(_) => EXIT_OTHER,
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        let msg = e.to_string();
        match e {
            HarnessError::Config(_) => CliError::Config(msg),
            HarnessError::Data(_) | HarnessError::Mech(_) | HarnessError::ShortSignal { .. } => CliError::Data(msg),
            HarnessError::Divergence { .. } => CliError::Divergence(msg),
            _ => CliError::Other(msg),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io(e) => CliError::Other(e.to_string()),
            e => CliError::Data(e.to_string()),
        }
    }
}

impl From<MechError> for CliError {
    fn from(e: MechError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "diprivacy", version, about = "Train and evaluate privacy-preserving smart-meter release mechanisms")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Training seed (generator seed for gen-data).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Named preset: desk-occupancy, desk-identity, occupancy-large, identity-large.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Privacy weights, comma separated; `train` takes exactly one.
    #[arg(long, global = true, value_delimiter = ',', num_args = 1..)]
    pub lambda: Option<Vec<f64>>,
    /// Sweep worker threads.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Mechanism bundle for psd and eval.
    #[arg(long, global = true)]
    pub bundle: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset as CSV.
    GenData,
    /// Train one mechanism.
    Train,
    /// Train one mechanism per λ and tabulate the trade-off.
    Sweep,
    /// Input and error power spectra of a trained mechanism.
    Psd,
    /// Retrain an attacker against a trained mechanism and report metrics.
    Eval,
}

impl Cli {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            preset: self.preset.clone(),
            out: self.out.clone(),
            seed: self.seed,
            lambdas: self.lambda.clone(),
            workers: self.workers,
            bundle: self.bundle.clone(),
        }
    }
}
