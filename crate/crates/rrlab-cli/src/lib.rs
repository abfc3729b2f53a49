//! Operator entry point wiring data, training, attacks, rejection metrics,
//! and evaluation into reproducible experiment runs.
//!
//! Exit code contract: `0` success, `2` usage or configuration error, `3`
//! numeric failure (divergence, non-finite values), `4` verification failure.
//! Every command writes a `manifest.txt` into its output directory on success
//! and failure alike; all output files are written atomically.

pub mod commands;
pub mod dataspec;
pub mod manifest;
pub mod par;

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;
pub const EXIT_VERIFY: u8 = 4;

pub use commands::{
    attack_dataset, cmd_attack, cmd_eval, cmd_train, cmd_verify, score_dataset, score_output,
    AttackArgs, AttackMode, EvalArgs, Rejector,
};
pub use dataspec::DataSpec;
pub use manifest::{write_atomic, Manifest};
