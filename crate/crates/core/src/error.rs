//! Crate-wide error type.

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Input violates a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Tensor shapes are incompatible for the requested operation.
    #[error("shape error: {0}")]
    Shape(String),

    /// A token lies outside the data vocabulary where only data tokens are allowed.
    #[error("invalid token: {0}")]
    InvalidToken(String),

    /// Cross-entropy was asked to average over zero positions.
    #[error("empty mask: no unmasked positions contribute to the loss")]
    EmptyMask,

    /// Training diverged (NaN/inf loss).
    #[error("training diverged at epoch {epoch}: {detail}")]
    Training { epoch: usize, detail: String },

    /// A recovery model was paired with an erasure pattern it cannot handle.
    #[error("pattern mismatch: {0}")]
    PatternMismatch(String),

    /// Feature sets too degenerate for k-NN manifold metrics.
    #[error("degenerate features: {0}")]
    DegenerateFeatures(String),

    /// A required artifact (checkpoint, dataset) is missing.
    #[error("missing dependency: {0}")]
    Dependency(String),

    /// Malformed or incomplete configuration.
    #[error("config error: {0}")]
    Config(String),

    /// File I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// File exists but its contents are not what the format requires.
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid_input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
