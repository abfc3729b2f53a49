//! Dense numerical kernels: matrices, temperature softmax, loss functions
//! with explicit stop-gradient markers, a reverse-mode tape, and a
//! finite-difference gradient checker.
//!
//! Everything here is pure: identical inputs produce bit-identical outputs,
//! and no function touches global state.

mod fdcheck;
mod kernels;
mod matrix;
pub mod tape;

pub use fdcheck::{finite_diff_check, FdReport};
pub use kernels::{
    argmax, bce_stopgrad, cross_entropy, kl_divergence, softmax_t, ProbVector, StopGradScalar,
    BCE_CLAMP, PROB_CLAMP,
};
pub use matrix::Matrix;

use thiserror::Error;

/// Errors produced by the numerical kernels.
#[derive(Debug, Error)]
pub enum NumError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("evaluation produced a non-finite value at coordinate {coord}")]
    NonFiniteEval { coord: usize },
}
