use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected length {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("{0}")]
    Undefined(String),

    #[error(
        "explicit representation needs {required} entries, above the memory budget of {budget}; \
         use the matrix-free representation"
    )]
    MemoryBudget { required: usize, budget: usize },

    #[error(
        "exact enumeration of C({num_cols}, {s}) supports exceeds the budget of {budget}; \
         use delta_greedy or delta_monte_carlo"
    )]
    EnumerationBudget { num_cols: usize, s: usize, budget: u64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
