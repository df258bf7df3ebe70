//! Privacy-preserving release of smart-meter time series.
//!
//! A *releaser* network rewrites a consumption series so that it stays close
//! to the original while an *adversary* network, trained alongside it, fails
//! to recover a sensitive label sequence (occupancy, household identity)
//! from the release. The releaser is penalized with an upper bound on the
//! directed information flowing from the labels to the adversary's
//! estimates. After training, an independent *attacker* measures how much
//! privacy the frozen releaser actually delivers.
//!
//! Modules, bottom up:
//!
//! - [`numkit`]: matrices and seeded randomness
//! - [`neural`]: stacked LSTMs with exact backpropagation through time
//! - [`optim`]: RMSprop, clipping, recurrent L2
//! - [`privmech`]: releaser, adversary, losses, DI bound
//! - [`data`]: synthetic generator, CSV ingestion, splits, batching
//! - [`harness`]: adversarial training, attacker, sweeps, metrics, PSD

pub mod numkit;
pub mod neural;
pub mod optim;
pub mod privmech;
pub mod data;
pub mod harness;
