//! Crate-wide error type and exit-code categories.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("column {0} of the design matrix is identically zero")]
    ZeroColumn(usize),

    #[error("{what} is rank deficient")]
    RankDeficient { what: String },

    #[error("{what} is not positive definite")]
    NotPositiveDefinite { what: String },

    #[error("dimension mismatch: {context}")]
    DimensionMismatch { context: String },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("column {column} is nearly collinear with the remaining columns (residual variance below 1e-12)")]
    NearCollinear { column: usize },

    #[error("numerical cross-check failed in {context}: max deviation {max_err:e}")]
    NumericalInconsistency { context: String, max_err: f64 },

    #[error("config parse error at line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    #[error("config validation failed for `{field}`: {message}")]
    ConfigValidation { field: String, message: String },

    #[error("data parse error in {path} at line {line}: {message}")]
    DataParse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("experiment failed: {failed} of {total} replicates errored (threshold 1%)")]
    ExperimentFailure { failed: usize, total: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code category: 2 parse, 3 validation, 4 runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ConfigParse { .. } | Error::DataParse { .. } => 2,
            Error::ConfigValidation { .. } | Error::InvalidParameter { .. } => 3,
            _ => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_mismatch(context: impl Into<String>) -> Error {
    Error::DimensionMismatch {
        context: context.into(),
    }
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
