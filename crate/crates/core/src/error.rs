use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model parameter `{field}`: {reason}")]
    InvalidModel { field: &'static str, reason: String },

    #[error("invalid configuration `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("non-finite value in `{what}` at step {step}")]
    NonFinite { what: &'static str, step: usize },

    #[error("out-of-order actuator tick: expected {expected}, got {got}")]
    TickOrder { expected: usize, got: usize },

    #[error("record parse error (line {line}): {reason}")]
    Parse { line: usize, reason: String },

    #[error("record declares NPTS={declared} but the body holds {found} values")]
    SampleCount { declared: usize, found: usize },

    #[error("bare CSV record needs a unit hint")]
    MissingUnits,

    #[error("cannot resample: {0}")]
    Resample(String),

    #[error("dataset too short: {len} ticks, need more than {warmup}")]
    DatasetTooShort { len: usize, warmup: usize },

    #[error("design matrix is rank deficient (rank {rank} of {cols}); near-collinear columns: {columns:?}")]
    RankDeficient {
        rank: usize,
        cols: usize,
        columns: Vec<String>,
    },

    #[error("expected {expected} {what}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("training diverged at epoch {epoch} (loss is not finite)")]
    Diverged { epoch: usize },

    #[error("{0}")]
    Metric(String),

    #[error("driver blow-up at tick {tick}: command is not finite; last {} records kept for diagnosis", .window.len())]
    DriverBlowUp {
        tick: usize,
        window: Vec<crate::runner::StepRecord>,
    },

    #[error("missing artifact {path}: {hint}")]
    MissingArtifact { path: PathBuf, hint: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Toml {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
