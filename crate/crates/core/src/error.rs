use std::io;

use thiserror::Error;

/// Errors produced anywhere in the spectrogram/explanation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("slice [{start}, {end}) out of range for signal of length {len}")]
    OutOfRange { start: usize, end: usize, len: usize },

    #[error("empty {split} interval for class {class_id}")]
    EmptyInterval { class_id: u32, split: &'static str },

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },

    #[error("unsupported: {0}")]
    Unsupported(&'static str),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("retraining with seed {seed} failed: {source}")]
    Retraining { seed: u64, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// True when the error stems from caller-supplied data or configuration
    /// rather than an internal failure.
    pub fn is_bad_input(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_)
                | Error::Shape { .. }
                | Error::OutOfRange { .. }
                | Error::EmptyInterval { .. }
                | Error::Format(_)
                | Error::Json(_)
        ) || matches!(self, Error::Io(e) if e.kind() == io::ErrorKind::NotFound)
            || matches!(self, Error::Retraining { source, .. } if source.is_bad_input())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
