use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// The variants are grouped so front ends can map them onto coarse
/// categories (configuration, data, numerics) without string matching;
/// see [`Error::category`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("degenerate training set: {0}")]
    DegenerateRemainder(String),

    #[error(
        "newton training did not converge after {iterations} iterations \
         (gradient norm {grad_norm:e})"
    )]
    Training { iterations: usize, grad_norm: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse error classes used for exit codes and HTTP statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Numerical,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) => ErrorCategory::Config,
            Error::Input(_)
            | Error::Dimension { .. }
            | Error::Parse { .. }
            | Error::DegenerateRemainder(_)
            | Error::Io { .. }
            | Error::Json(_) => ErrorCategory::Data,
            Error::Training { .. } | Error::Numerical(_) => ErrorCategory::Numerical,
        }
    }
}
