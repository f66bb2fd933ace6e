//! Experiment harness for the single-mode, cuts-curve, multi-mode,
//! generalization and perturbation-campaign studies.

// Positivity checks are written `!(x > 0.0)` so that NaN fails them too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod multimode;
pub mod report;
pub mod single_mode;
pub mod tasks;
pub mod theorem1;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("unknown asset {0:?}")]
    UnknownAsset(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("setup failed: {0}")]
    Setup(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
