//! Two-head classifiers with a reject option.
//!
//! This crate trains small fully connected networks that carry two heads over
//! a shared backbone: a softmax classifier and an auxiliary rectifier that
//! scales the classifier's confidence into the *rectified confidence* (R-Con)
//! rejection metric. Confidence and R-Con form a coupled rejector whose
//! separation guarantee is machine-checked here, alongside the adversarial
//! training loop, first-order attacks, and the evaluation protocol used to
//! score rejection quality.
//!
//! The guide under `book/` walks through the concepts chapter by chapter;
//! every code snippet in it runs as a doc-test of the `rrlab-book` crate.
//!
//! Quick tour:
//!
//! ```
//! use rrlab::numkit::softmax_t;
//! use rrlab::rejection::{coupled_reject, RejectionScores, Stage};
//!
//! let probs = softmax_t(&[2.0, 0.0, -1.0], 1.0)?;
//! let scores = RejectionScores::from_parts(&probs, 0, 0.9)?;
//! let decision = coupled_reject(&scores, 0.2)?;
//! assert_eq!(decision.stage, Stage::Accepted);
//! # Ok::<(), rrlab::Error>(())
//! ```

pub mod attacks;
pub mod config;
pub mod data;
pub mod evaluation;
pub mod model;
pub mod numkit;
pub mod oracle;
pub mod rejection;
pub mod rng;
pub mod training;

pub use attacks::{AdaptiveObjective, AttackConfig, AttackResult, Norm, ObjectiveKind};
pub use data::Dataset;
pub use evaluation::{EvalReport, ScoredSample};
pub use model::{Architecture, BnMode, Checkpoint, HeadOutputs, TwoHeadParams};
pub use numkit::{Matrix, ProbVector, StopGradScalar};
pub use rejection::{Definition1Result, RejectionScores};
pub use training::{Framework, RconMode, TrainConfig, TrainLog};

use thiserror::Error;

/// Any error the crate can produce, for callers that do not care which
/// subsystem failed.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Num(#[from] numkit::NumError),
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Data(#[from] data::DataError),
    #[error(transparent)]
    Attack(#[from] attacks::AttackError),
    #[error(transparent)]
    Training(#[from] training::TrainingError),
    #[error(transparent)]
    Evaluation(#[from] evaluation::EvalError),
    #[error(transparent)]
    Rejection(#[from] rejection::RejectionError),
    #[error(transparent)]
    Config(#[from] config::ConfigError),
}
