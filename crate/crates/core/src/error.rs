//! Crate-wide error type.

use thiserror::Error;

/// Errors produced anywhere in the recognition pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid static configuration (topology, model sizes, run settings).
    #[error("config error: {0}")]
    Config(String),

    /// Tensor shapes do not conform to the operation's contract.
    #[error("shape error in {op}: {msg}")]
    Shape { op: &'static str, msg: String },

    /// A numeric guard tripped: an operation produced NaN or Inf.
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    /// Spatial-configuration partitioning was requested without a reference frame.
    #[error("missing reference frame for spatial-configuration partitioning")]
    MissingReference,

    /// Skeleton too degenerate to normalize (near-zero mean bone length).
    #[error("degenerate skeleton: mean bone length {0} below threshold")]
    DegenerateSkeleton(f64),

    /// A class label was outside the model's vocabulary.
    #[error("label error: {0}")]
    Label(String),

    /// A dataset-level precondition failed (empty set, bad split, ...).
    #[error("data error: {0}")]
    Data(String),

    /// A file did not conform to its schema.
    #[error("parse error in {path}: {msg}")]
    Parse { path: String, msg: String },

    /// Invalid input to a pure computation (overlapping events, length mismatch).
    #[error("input error: {0}")]
    Input(String),

    /// A streaming state machine was queried before it had any content.
    #[error("state error: {0}")]
    State(String),

    /// Underlying I/O failure.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Shape { op, msg: msg.into() }
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
