use std::path::PathBuf;

use thiserror::Error;

/// Errors produced while loading data, fitting, or evaluating a model.
#[derive(Debug, Error)]
pub enum NerfError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("eigensolver did not converge for a {0}x{0} matrix")]
    EigenNoConvergence(usize),

    #[error("sample {index}: leverage {leverage} too close to 1, sample cannot be dropped")]
    Undroppable { index: usize, leverage: f64 },

    #[error("random network generation exhausted {0} retries")]
    RetriesExhausted(usize),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl NerfError {
    /// True for failures of the numerical machinery rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            NerfError::Singular(_)
                | NerfError::EigenNoConvergence(_)
                | NerfError::Undroppable { .. }
                | NerfError::RetriesExhausted(_)
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        NerfError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, NerfError>;
