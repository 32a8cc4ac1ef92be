use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::trace::ValidationReport;

/// Errors raised across the analysis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    /// A line of a text file could not be decoded.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A well-formed line that disagrees with its file header.
    #[error("schema error at line {line}: {message}")]
    Schema { line: usize, message: String },

    /// An operation was called outside its preconditions.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("lookup failed: {0}")]
    Lookup(String),

    #[error("validation failed: {}", .0.summary())]
    Validation(ValidationReport),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn lookup(msg: impl Into<String>) -> Self {
        Error::Lookup(msg.into())
    }

    /// Short machine-readable category used by the command line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Schema { .. } => "schema",
            Error::Contract(_) => "contract",
            Error::Lookup(_) => "lookup",
            Error::Validation(_) => "validation",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
