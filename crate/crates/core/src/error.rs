//! Error type shared across the crate, mapped onto process exit codes by the CLI.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameter or configuration value; names the offending field.
    #[error("invalid parameter `{field}`: {message}")]
    Param { field: String, message: String },
    /// Numeric failure (factorization breakdown, degenerate input, non-finite value).
    #[error("numeric failure: {0}")]
    Numeric(String),
    /// File input/output failure.
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    /// Malformed file content (checkpoints, GMM files, configs).
    #[error("parse failure in {path}: {message}")]
    Parse { path: String, message: String },
}

impl Error {
    pub fn param(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Param {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Error::Numeric(message.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit code for the CLI: 2 config/parameter, 3 numeric, 4 i/o.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Param { .. } => 2,
            Error::Numeric(_) => 3,
            Error::Io { .. } => 4,
            Error::Parse { .. } => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
