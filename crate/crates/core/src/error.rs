use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A malformed input row. `line` is 1-based and counts the header.
    #[error("{reason}, line {line}")]
    Parse { line: u64, reason: String },

    #[error("annotations reference unknown image ids: {}", .0.join(", "))]
    UnknownImages(Vec<String>),

    #[error("image ids present on only one side: {}", .0.join(", "))]
    UnpairedImages(Vec<String>),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("simulation infeasible: {0}")]
    Infeasible(String),

    #[error("malformed tensor file {path}: {reason}")]
    Tensor { path: PathBuf, reason: String },

    #[error("failed to read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn parse(line: u64, reason: impl Into<String>) -> Self {
        Error::Parse {
            line,
            reason: reason.into(),
        }
    }

    pub(crate) fn read(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Read {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn write(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Write {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 for bad input or parameters, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Write { .. } | Error::Json(_) | Error::Csv(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
