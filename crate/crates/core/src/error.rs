//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration values (bad dimensions, thresholds, mappings...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Matrix/vector shape mismatch at an API boundary.
    #[error("shape error: {0}")]
    Shape(String),

    /// Malformed or inconsistent data (files, labels, masks).
    #[error("data error: {0}")]
    Data(String),

    /// Non-finite values produced during numeric computation.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// CLI exit code bucket for this error kind.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Shape(_) => 1,
            Error::Data(_) | Error::Io { .. } => 2,
            Error::Numeric(_) => 3,
        }
    }
}
