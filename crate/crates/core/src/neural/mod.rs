//! Stacked LSTM sequence networks with hand-written backpropagation through
//! time.
//!
//! A [`StackedNet`] is a stack of [`LstmLayerParams`] followed by an
//! [`OutputHead`] applied at every time step. Inputs and outputs are
//! sequences of `dim × batch` matrices. Hidden and cell states start at zero
//! for every sequence.
//!
//! Parameters flatten in a fixed order: for every layer from the bottom up,
//! its input weights, recurrent weights and bias (each row-major, with the
//! four gate blocks stacked as forget, input gate, output gate, candidate),
//! then the head weights and head bias.

mod gradcheck;
mod io;
mod lstm;
mod net;

pub use gradcheck::{grad_check, GradCheckReport};
pub use lstm::{cell_backward, cell_forward, CellCache, Gate, LstmLayerParams, LstmState};
pub use net::{ForwardTape, HeadKind, NetGradient, NetSpec, OutputHead, StackedNet, TensorRole};

use crate::numkit::NumError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("input at step {step} has {got} rows, network expects {expected}")]
    InputDim {
        step: usize,
        got: usize,
        expected: usize,
    },
    #[error("empty input sequence")]
    EmptySequence,
    #[error("tape does not match this network: {0}")]
    TapeMismatch(String),
    #[error("invalid network spec: {0}")]
    Spec(String),
    #[error("parameter buffer has {got} values, network has {expected}")]
    ParamCount { got: usize, expected: usize },
    #[error("malformed network file at line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
