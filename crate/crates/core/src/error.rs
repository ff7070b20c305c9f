//! Error type shared by every module.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("non-numeric cell {value:?} at row {row}, column {column:?}")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("non-finite value at row {row}, column {column:?}")]
    NonFinite { row: usize, column: String },

    #[error("unknown column {0:?}")]
    UnknownColumn(String),

    #[error("dimensionality mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("label id {id} out of range for {n_classes} classes")]
    InvalidLabel { id: usize, n_classes: usize },

    #[error("at least {required} distinct classes required, found {found}")]
    TooFewClasses { required: usize, found: usize },

    #[error("at least {required} instances required, found {found}")]
    TooFewInstances { required: usize, found: usize },

    #[error("invalid split: train fraction {fraction} of {n} instances leaves an empty side")]
    DegenerateSplit { fraction: f64, n: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no counterfactual found (searched up to radius {radius})")]
    NoCounterfactual { radius: f64 },

    #[error("empty neighbor index")]
    EmptyIndex,

    #[error("stability undefined: no dataset point in the ball of radius {eps}")]
    StabilityUndefined { eps: f64 },

    #[error("stability undefined: explainer failed on all {n_neighbors} neighbors")]
    AllNeighborsFailed { n_neighbors: usize },

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Errors caused by the user's inputs rather than by the run itself.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Json(_)
                | Error::UnknownColumn(_)
                | Error::InvalidParameter(_)
                | Error::DegenerateSplit { .. }
        )
    }
}
