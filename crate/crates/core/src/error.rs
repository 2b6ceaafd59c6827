use thiserror::Error;

use crate::train::TrainingLog;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot broadcast shapes {lhs:?} and {rhs:?}")]
    Broadcast { lhs: Vec<usize>, rhs: Vec<usize> },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed input at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A loss or parameter became non-finite. `log` holds every epoch that
    /// completed before the failure.
    #[error("training diverged at epoch {epoch}: {message}")]
    TrainingDiverged {
        epoch: usize,
        message: String,
        log: Box<TrainingLog>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(message: impl Into<String>) -> Result<T> {
    Err(Error::Shape(message.into()))
}
