use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: u64, reason: String },

    #[error("line {line}: expected {expected} features, found {found}")]
    FeatureCount {
        line: u64,
        expected: usize,
        found: usize,
    },

    #[error("line {line}: duplicate record for node {node_id} at timestamp {timestamp}")]
    DuplicateRecord {
        line: u64,
        node_id: String,
        timestamp: i64,
    },

    #[error("feature header mismatch between inputs: {0}")]
    HeaderMismatch(String),

    #[error("split needs at least {min} records, got {got}")]
    TooFewRecords { min: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("feature width mismatch: model expects {expected}, record has {found}")]
    WidthMismatch { expected: usize, found: usize },

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Divergence {
        epoch: usize,
        batch: usize,
        loss: f64,
    },

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("training-set reconstruction error is zero; normalized errors are undefined")]
    DegenerateModel,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("percentile must be in 1..=99, got {0}")]
    PercentileRange(u32),

    #[error("calibration set lacks the {0} class; percentile search is undefined")]
    MissingClass(&'static str),

    #[error("inconsistent governor schedule: {0}")]
    Schedule(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
