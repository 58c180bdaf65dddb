use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {details}")]
    ShapeMismatch { op: &'static str, details: String },

    #[error("tensor belongs to a different graph (op {op})")]
    GraphMismatch { op: &'static str },

    #[error("{op} requires a non-empty input")]
    EmptyInput { op: &'static str },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("mean-pool over a fully masked sequence")]
    AllPositionsMasked,

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("unknown parameter {0}")]
    UnknownParam(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("exact policy gradient supports n <= {max}, got {got}")]
    EnumerationTooLarge { max: usize, got: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
