use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("control grids do not match: {0}")]
    GridMismatch(String),

    #[error("invalid control: {0}")]
    InvalidControl(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("switch from mode {0} to itself is not a switch")]
    SelfSwitch(usize),

    #[error("instance too large for exhaustive enumeration ({0} sequences, limit {1})")]
    InstanceTooLarge(u128, u128),

    #[error("integration did not reach tolerance {tol:e} within {max_substeps} substeps per cell (last estimate {estimate:e})")]
    NonConvergence {
        tol: f64,
        max_substeps: usize,
        estimate: f64,
    },

    #[error("linear solve failed: zero pivot in row {0}")]
    SingularPivot(usize),

    #[error("{context} (line {line}): {message}")]
    Parse {
        context: String,
        line: u64,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Errors caused by bad user input rather than an internal failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidGrid(_)
                | Error::GridMismatch(_)
                | Error::InvalidControl(_)
                | Error::InvalidModel(_)
                | Error::InvalidConfig(_)
                | Error::SelfSwitch(_)
                | Error::InstanceTooLarge(..)
                | Error::Parse { .. }
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
