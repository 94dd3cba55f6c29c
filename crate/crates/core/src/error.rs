//! Crate-wide error type.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A precondition on an argument was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Array shapes do not line up for an operation.
    #[error("shape mismatch in {op}: {details}")]
    ShapeMismatch { op: String, details: String },

    /// File I/O failure, with the offending path.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A serialized file does not conform to its format.
    #[error("format error in {path}: {details}")]
    Format { path: PathBuf, details: String },

    /// A non-finite value surfaced where finite data is required.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn shape(op: impl Into<String>, details: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op: op.into(),
            details: details.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, details: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            details: details.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
