use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("probability map has no mass")]
    NoMass,

    #[error("slice {slice}: {source}")]
    Slice {
        slice: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("point lies outside the image: {0}")]
    OutOfBounds(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::Degenerate(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    /// True for errors caused by unreadable or malformed input files.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. } | Error::Format { .. } | Error::InvalidInput(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
