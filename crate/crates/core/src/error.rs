use thiserror::Error;

/// Errors produced by the core library.
#[derive(Debug, Error)]
pub enum Error {
    /// An instance mask or cell set that cannot be used (empty mask, empty cell set).
    #[error("degenerate instance: {0}")]
    DegenerateInstance(String),

    /// Mismatched dimensions between two values that must agree.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A parameter or input outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// NaN or infinity where a finite value is required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// A training loop produced a non-finite loss.
    #[error("training diverged at step {step}: loss = {loss}")]
    Divergence { step: usize, loss: f64 },

    /// A sequence shorter than the sampler or trainer requires.
    #[error("sequence too short: {0}")]
    SequenceTooShort(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// Malformed or unsupported file contents.
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
