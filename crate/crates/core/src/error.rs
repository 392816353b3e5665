use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Cholesky failed at every rung of the jitter ladder.
    #[error("{context}: matrix not positive definite after jitter sequence {jitters:?}")]
    NotPositiveDefinite { context: &'static str, jitters: Vec<f64> },

    #[error("hyperparameter learning failed on every restart: {}", .0.join("; "))]
    LearningFailed(Vec<String>),

    #[error(transparent)]
    Objective(#[from] ObjectiveError),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

/// Failure of a single black-box evaluation.
#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("evaluation timed out after {seconds}s{}", diagnostics_suffix(.stderr))]
    Timeout { seconds: f64, stderr: String },

    #[error("protocol error: {reason}: {line:?}")]
    Protocol { reason: String, line: String },

    #[error("evaluator exited with {status}{}", diagnostics_suffix(.stderr))]
    Exited { status: String, stderr: String },

    #[error("evaluator i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("objective returned non-finite value {0}")]
    NonFinite(f64),
}

fn diagnostics_suffix(stderr: &str) -> String {
    let tail = stderr.trim();
    if tail.is_empty() {
        String::new()
    } else {
        format!("; stderr: {tail}")
    }
}
