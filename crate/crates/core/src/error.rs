use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("synthesis failed after {attempts} attempts: {reason}")]
    Synthesis { attempts: usize, reason: String },

    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("scale estimation failed: {0}")]
    Estimation(String),

    #[error("calibration error: rho must be positive, got {0}")]
    Calibration(f64),

    #[error("cohort error: {0}")]
    Cohort(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("{path}:{line}: {msg}")]
    Format { path: PathBuf, line: usize, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
