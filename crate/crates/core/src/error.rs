use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("schema error: missing column `{0}`")]
    MissingColumn(String),

    #[error("no census profile for zone `{0}`")]
    MissingProfile(String),

    #[error("date {0} is outside the service calendar")]
    DateOutsideCalendar(chrono::NaiveDate),

    #[error("infeasible target statistics for `{variable}`: {reason}")]
    InfeasibleTarget { variable: String, reason: String },

    #[error("k = {k} exceeds the {distinct} distinct points")]
    TooFewDistinct { k: usize, distinct: usize },

    #[error("class {class} has {count} rows, fewer than the {required} required")]
    ClassTooSmall {
        class: usize,
        count: usize,
        required: usize,
    },

    #[error("training diverged: {0}")]
    NonFinite(String),

    #[error("{features} features exceed the exact-enumeration limit of {limit}; use the sampling estimator")]
    TooManyFeatures { features: usize, limit: usize },

    #[error("all {trials} trials failed; first error: {first_error}")]
    AllTrialsFailed { trials: usize, first_error: String },

    #[error("missing artifact {0}")]
    MissingArtifact(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}
