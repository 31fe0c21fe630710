use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type. The CLI maps variants onto process exit codes
/// (see [`Error::exit_code`]), so keep new variants in one of the existing
/// categories: usage, data format, numeric failure, missing artifact.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A record in a data file is missing a required field.
    #[error("line {line}: missing field \"{field}\"")]
    MissingField { line: usize, field: &'static str },

    /// A data file violates its documented format.
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },

    /// Data-level contract violation not tied to a specific line.
    #[error("{0}")]
    Data(String),

    /// Tensor/vector dimensions do not match.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// NaN or infinity showed up where a finite value is required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// A required input file or model artifact does not exist.
    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    /// Bad configuration or argument combination.
    #[error("{0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Exit code contract: 0 success, 2 usage error, 3 data-format error,
    /// 4 numeric failure, 5 missing artifact.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Shape(_) => 2,
            Error::MissingField { .. } | Error::Format { .. } | Error::Data(_) => 3,
            Error::NonFinite(_) => 4,
            Error::Io { .. } | Error::MissingArtifact(_) => 5,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
