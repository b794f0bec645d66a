//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes incompatible for an operation. The message names the
    /// operation and the offending dimension.
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A gradient entry came back NaN/Inf during a gradient check.
    #[error("non-finite gradient for input {input} entry {entry}")]
    NonFiniteGrad { input: usize, entry: usize },

    /// Training loss became non-finite; reported with the failing step.
    #[error("non-finite loss at step {step}")]
    NanLoss { step: u64 },

    #[error("object placement failed: could not place {placed} of {requested} objects without overlap")]
    Placement { placed: usize, requested: usize },

    #[error("duplicate instance id {id} in frame")]
    DuplicateId { id: u64 },

    #[error("dataset error at {path}: {detail}")]
    Dataset { path: String, detail: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub fn dataset(path: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Dataset {
            path: path.into(),
            detail: detail.into(),
        }
    }
}
