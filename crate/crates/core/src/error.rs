use std::io;

use thiserror::Error;

/// Errors raised by the discretization, solver and driver layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The sparse factorization broke down.
    #[error("factorization failed: {reason} (dimension {dim})")]
    SolverFailure { reason: String, dim: usize },

    /// The solve finished but the residual contract was not met.
    #[error("linear solve did not reach tolerance: relative residual {residual:.3e} > {tol:.3e}")]
    ConvergenceFailure { residual: f64, tol: f64 },

    /// The active-set iteration hit its iteration cap.
    #[error("active-set iteration did not converge after {iterations} iterations (last active-set change: {last_change} components)")]
    IterationFailure { iterations: usize, last_change: usize },

    #[error("level {level}: {source}")]
    AtLevel {
        level: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

impl Error {
    pub fn at_level(self, level: usize) -> Error {
        Error::AtLevel {
            level,
            source: Box::new(self),
        }
    }

    /// Strip level annotations and return the innermost error.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtLevel { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
