use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = HarError> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// Variants are grouped by the exit-code family the CLI maps them to:
/// I/O, data/format problems, and configuration problems.
#[derive(Debug, Error)]
pub enum HarError {
    #[error("dimension mismatch on {axis}: {detail}")]
    Dimension { axis: String, detail: String },

    #[error("index {index} out of range at position {position} (must be < {bound})")]
    Index {
        position: usize,
        index: usize,
        bound: usize,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training data: {0}")]
    TrainingData(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("fold {fold} (test subject {subject}): {source}")]
    Fold {
        fold: usize,
        subject: String,
        #[source]
        source: Box<HarError>,
    },
}

impl HarError {
    pub(crate) fn dim(axis: impl Into<String>, detail: impl Into<String>) -> Self {
        HarError::Dimension {
            axis: axis.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        HarError::Io {
            path: path.into(),
            source,
        }
    }

    /// Strips fold annotations and returns the underlying error.
    pub fn root(&self) -> &HarError {
        match self {
            HarError::Fold { source, .. } => source.root(),
            other => other,
        }
    }
}
