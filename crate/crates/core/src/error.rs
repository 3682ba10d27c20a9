use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("row {row}, column {column}: cannot parse {value:?} as a finite number")]
    NonNumeric {
        row: usize,
        column: usize,
        value: String,
    },

    #[error("label column {0} not found")]
    MissingLabelColumn(String),

    #[error("expected exactly two classes, found {found}")]
    ClassCount { found: usize },

    #[error("minority class {label:?} has {minority} samples but majority has {majority}")]
    MinorityLarger {
        label: String,
        minority: usize,
        majority: usize,
    },

    #[error("minority label {0:?} does not occur in the data")]
    EmptyMinority(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("requested {k} neighbours but only {available} points are available")]
    TooFewPoints { k: usize, available: usize },

    #[error("convex combination of {k} points requested from a pool of {pool}")]
    PoolTooSmall { k: usize, pool: usize },

    #[error("classifier diverged: {0}")]
    Diverged(String),

    #[error("incomplete results: {0}")]
    Incomplete(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the input data rather than by a bug or bad parameters.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Csv(_)
                | Error::Json(_)
                | Error::NonNumeric { .. }
                | Error::MissingLabelColumn(_)
                | Error::ClassCount { .. }
                | Error::MinorityLarger { .. }
                | Error::EmptyMinority(_)
                | Error::InvalidDataset(_)
                | Error::Incomplete(_)
        )
    }
}
