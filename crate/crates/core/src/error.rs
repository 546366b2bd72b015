use std::path::PathBuf;

/// Errors produced by slicedrift.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("dataset has no misclassified rows; weak slices are undefined")]
    NoErrors,

    #[error("dataset has no misclassification indicator")]
    Unlabeled,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("slice set contains no rules")]
    EmptySliceSet,

    #[error("cannot force a change in column `{column}` after {attempts} attempts")]
    DistortionImpossible { column: String, attempts: usize },

    #[error("degenerate stratum: {0}")]
    DegenerateStratum(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("I/O error on {}", path.display())]
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

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
