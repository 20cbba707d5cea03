use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure classes shared by every pipeline stage.
///
/// The CLI maps these onto exit codes, so the split between validation,
/// numerical and I/O failures matters.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Validation(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{0}")]
    Numerical(String),

    #[error("eigensolver did not converge after {iterations} restarts (worst residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("mass matrix is not positive definite on the free set (global index {index})")]
    IndefiniteMass { index: usize },

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse failure class, used to pick a process exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Numerical,
    Io,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Validation(_) | Error::Parse { .. } => ErrorClass::Validation,
            Error::Numerical(_) | Error::NotConverged { .. } | Error::IndefiniteMass { .. } => ErrorClass::Numerical,
            Error::MissingArtifact(_) | Error::Io(_) | Error::Csv(_) | Error::Json(_) => ErrorClass::Io,
        }
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: msg.into(),
        }
    }
}
