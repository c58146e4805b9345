use thiserror::Error;

/// Errors surfaced at operation and pipeline boundaries.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: invalid shape {shape:?}: {reason}")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },

    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("data error at row {row}: {message}")]
    DataRow { row: usize, message: String },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
