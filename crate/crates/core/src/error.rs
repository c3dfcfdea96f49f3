//! Error type shared by every pipeline stage.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or configuration value is out of its allowed range.
    #[error("configuration error: {0}")]
    Config(String),

    /// Operand dimensions do not line up.
    #[error("shape error: {0}")]
    Shape(String),

    /// A NaN or infinity showed up where finite values are required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// The input exceeds a fixed work budget.
    #[error("capacity error: {0}")]
    Capacity(String),

    /// The caller broke an API contract (for example a non-scalar loss).
    #[error("contract error: {0}")]
    Contract(String),

    #[error("training diverged at step {step}: {message}")]
    Training { step: usize, message: String },

    #[error("malformed file {path}: {message}")]
    Format { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
