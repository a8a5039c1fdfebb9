use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("input is not centered: row {row} has mean {mean:e}")]
    NotCentered { row: usize, mean: f64 },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("eigendecomposition did not converge after {sweeps} sweeps")]
    EigenFailure { sweeps: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("node {node} is unreachable from source {source_node}")]
    Unreachable { source_node: usize, node: usize },

    #[error("index {index} out of range for length {len}")]
    OutOfRange { index: usize, len: usize },

    #[error("forward cache is stale: it was produced by model version {cached}, model is at {current}")]
    StaleCache { cached: u64, current: u64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("all-zero variances")]
    AllZeroVariances,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn mismatch(msg: impl Into<String>) -> Error {
    Error::DimensionMismatch(msg.into())
}
