//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument was structurally invalid (bad dimension,
    /// out-of-range parameter, malformed subset, bad config value, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The requested epoch schedule cannot exist: the horizon does not
    /// exceed one estimation phase (`T <= tau1 * p`).
    #[error("infeasible schedule: {0}")]
    InfeasibleSchedule(String),

    /// A numerical routine failed: non-positive-definite Gram matrix inside a
    /// Riccati step, divergent value iteration, a failed envelope fit, or an
    /// internal identity check that did not hold to tolerance.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Random instance generation exhausted its retry budget.
    #[error("instance generation failed after {attempts} attempts: {reason}")]
    Generation { attempts: usize, reason: String },

    /// A bound-verification campaign found violations.
    #[error("verification failed: {0}")]
    VerificationFailed(String),

    /// A structured input file did not match the expected format or version.
    #[error("format error: {0}")]
    Format(String),

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    /// Process exit code used by the command-line interface for this error:
    /// 2 for configuration errors, 3 for an infeasible schedule, 4 for a
    /// failed verification campaign, 1 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::Format(_) => 2,
            Error::InfeasibleSchedule(_) => 3,
            Error::VerificationFailed(_) => 4,
            Error::Numerical(_) | Error::Generation { .. } | Error::Io(_) => 1,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
