//! Dense linear algebra and seeded random numbers.
//!
//! Everything numeric in the crate flows through [`Matrix`]: a row-major,
//! double precision, two dimensional array. Sequence models use the
//! convention that **one column is one batch element**, so a minibatch of
//! `B` observations of dimension `d` at a single time step is a `d × B`
//! matrix.

pub(crate) mod matrix;
mod rng;

pub use matrix::{affine, map_elementwise, matmul, softmax_columns, Elementwise, Matrix};
pub use rng::{derive_seed, draw_uniform, SeededRng};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("{op}: value {value} outside the function domain")]
    Domain { op: &'static str, value: f64 },
    #[error("matrix dimensions must be positive, got {rows}x{cols}")]
    EmptyShape { rows: usize, cols: usize },
    #[error("buffer of length {len} cannot hold a {rows}x{cols} matrix")]
    BufferLength { len: usize, rows: usize, cols: usize },
}
