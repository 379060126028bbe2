//! Error type shared by every module in the toolkit.

use std::fmt;
use std::io;

/// Broad failure class, used to map errors onto process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Invalid configuration, arguments, or preconditions.
    Usage,
    /// Malformed files or inconsistent input data.
    Data,
    /// Numerical failure: degenerate features, diverging training.
    Numeric,
    /// Underlying I/O failure.
    Io,
}

#[derive(Debug)]
pub enum Error {
    /// Invalid configuration value or argument combination.
    Config(String),
    /// A file does not conform to its declared format. `detail` names the
    /// byte offset or line where parsing failed.
    Format { path: String, detail: String },
    /// Structurally valid input with invalid content: non-finite values,
    /// sparse identity ids, or too few rows for a metric to be defined.
    Data(String),
    /// Degenerate feature vectors or non-finite training losses.
    Numeric(String),
    /// I/O failure together with the path that produced it.
    Io { path: String, source: io::Error },
}

impl Error {
    pub fn format(path: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<String>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) => ErrorClass::Usage,
            Error::Format { .. } | Error::Data(_) => ErrorClass::Data,
            Error::Numeric(_) => ErrorClass::Numeric,
            Error::Io { .. } => ErrorClass::Io,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Format { path, detail } => write!(f, "format error in {path}: {detail}"),
            Error::Data(msg) => write!(f, "data error: {msg}"),
            Error::Numeric(msg) => write!(f, "numeric error: {msg}"),
            Error::Io { path, source } => write!(f, "i/o error on {path}: {source}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
