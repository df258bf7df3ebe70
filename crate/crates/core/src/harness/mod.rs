//! Training and evaluation pipeline.
//!
//! [`train_adversarial`] runs the alternating releaser/adversary game,
//! [`train_attacker`] fits a fresh classifier against the frozen releaser,
//! and [`run_point`] chains both with the test-set metrics into one
//! [`TradeoffPoint`]. [`sweep_lambda`] repeats that over privacy weights.

mod config;
mod metrics;
mod psd;
mod report;
mod sweep;
mod train;

pub use config::{ObservationMode, Preset, SyntheticSetup, TrainConfig, PRESET_NAMES};
pub use metrics::{balanced_accuracy, majority_vote_accuracy, nrmse, spearman};
pub use psd::{error_psd_report, harmonic_bins, welch_psd, Psd, PsdReport, Window, WelchParams};
pub use report::{read_tradeoff_csv, write_history_csv, write_psd_csv, write_tradeoff_csv, TRADEOFF_HEADER};
pub use sweep::{assess, eval_seed, run_point, sweep_lambda, Assessment, PointOutcome, TradeoffPoint};
pub use train::{
    observations, train_adversarial, train_attacker, AttackerHistory, EpochRecord, IterationRecord, TrainHistory,
    TrainedPair,
};

use thiserror::Error;

use crate::data::DataError;
use crate::optim::OptimError;
use crate::privmech::MechError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Mech(#[from] MechError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error("training diverged during {stage} at iteration {iteration} (non-finite loss)")]
    Divergence {
        stage: &'static str,
        iteration: usize,
        history: Box<TrainHistory>,
    },
    #[error("signal of length {len} is shorter than one segment of {segment}")]
    ShortSignal { len: usize, segment: usize },
    #[error("{0}")]
    Metric(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<crate::neural::NeuralError> for HarnessError {
    fn from(e: crate::neural::NeuralError) -> Self {
        HarnessError::Mech(e.into())
    }
}
