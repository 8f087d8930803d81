use std::path::PathBuf;

use thiserror::Error;

/// Broad failure classes. The CLI maps these onto exit codes and the C API
/// onto status codes, so the set is part of the public contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Io,
    Validation,
    Numerical,
    NoSignal,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value at row {row}, column {column}")]
    NonFinite { row: usize, column: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("signal quality index undefined: {0}")]
    UndefinedScore(String),

    #[error("no sources retained: {0}")]
    NoSources(String),

    #[error("image decoding failed for {path}: {message}")]
    Image { path: PathBuf, message: String },
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io { .. } => ErrorClass::Io,
            Error::Parse { .. }
            | Error::DimensionMismatch(_)
            | Error::NonFinite { .. }
            | Error::InvalidParameter(_)
            | Error::Validation(_)
            | Error::InsufficientData(_)
            | Error::Image { .. } => ErrorClass::Validation,
            Error::Numerical(_) | Error::UndefinedScore(_) => ErrorClass::Numerical,
            Error::NoSources(_) => ErrorClass::NoSignal,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
