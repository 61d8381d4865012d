use std::path::PathBuf;

use thiserror::Error;

use crate::samplers::RunReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Structural,
    Numeric,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("numerical blow-up at step {step} (step size {step_size}): {reason}; try a smaller step size")]
    BlowUp {
        step: usize,
        step_size: f64,
        reason: String,
        partial: Option<Box<RunReport>>,
    },

    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        last_iterate: Vec<f64>,
    },

    #[error("{failed} of {repeats} repeats failed")]
    TooManyFailures { failed: usize, repeats: usize },

    #[error("integrator instability at s = {time}: {reason}")]
    Unstable { time: f64, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Dimension(_) | Error::Invalid(_) | Error::Format { .. } => ErrorKind::Structural,
            Error::NonFinite(_)
            | Error::BlowUp { .. }
            | Error::NonConvergence { .. }
            | Error::Unstable { .. }
            | Error::TooManyFailures { .. } => ErrorKind::Numeric,
            Error::Io { .. } => ErrorKind::Io,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
