//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("empty sample list")]
    EmptySamples,

    #[error("{0}")]
    InvalidParameter(String),

    #[error("operation requires the {required} schedule variant")]
    WrongScheduleKind { required: &'static str },

    #[error("scalar step size undefined for x = 0")]
    ZeroFeature,

    /// The normal-equation system is still rank-deficient (or too
    /// ill-conditioned to trust); callers skip this checkpoint.
    #[error("system not yet identifiable (rank-deficient or ill-conditioned)")]
    NotYetIdentifiable,

    #[error("sample stream exhausted after {got} of {needed} samples")]
    StreamExhausted { needed: u64, got: u64 },

    #[error("{path}: malformed row at line {line}: {message}")]
    MalformedRow {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("ERM error missing or zero on the ratio tail at checkpoint index {index}")]
    MissingTailBaseline { index: usize },

    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
