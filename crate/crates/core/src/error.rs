//! Error types, one enum per subsystem.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config field `{field}`: {message}")]
    Invalid { field: &'static str, message: String },
}

impl ConfigError {
    pub(crate) fn invalid(field: &'static str, message: impl Into<String>) -> Self {
        Self::Invalid {
            field,
            message: message.into(),
        }
    }

    /// Name of the offending field for constraint violations.
    pub fn field(&self) -> Option<&'static str> {
        match self {
            Self::Invalid { field, .. } => Some(field),
            _ => None,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("non-finite loss at sample {index}")]
    NonFiniteLoss { index: usize },
    #[error("training diverged during epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("sample index {index} out of range for dataset of {len} samples")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("no samples selected for training")]
    EmptySelection,
    #[error("weight vector of length {actual} does not match layout (expected {expected})")]
    LayoutMismatch { expected: usize, actual: usize },
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read trace file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("trace line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("trace line {line}: duplicate client id {id}")]
    DuplicateId { line: usize, id: u64 },
    #[error("trace line {line}: client {id} has an empty `{field}` list")]
    EmptyList {
        line: usize,
        id: u64,
        field: &'static str,
    },
    #[error("trace line {line}: client {id} has a non-positive value in `{field}`")]
    NonPositive {
        line: usize,
        id: u64,
        field: &'static str,
    },
    #[error("degenerate generator parameter `{param}`: {message}")]
    Degenerate { param: &'static str, message: String },
}

#[derive(Debug, Error, PartialEq)]
pub enum ServerError {
    #[error("no client metadata available for loss-threshold selection")]
    EmptyMetadata,
    #[error("client {0} has no capability data")]
    MissingCapability(usize),
    #[error("empty cohort")]
    EmptyCohort,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("client {client}: {source}")]
    Model {
        client: usize,
        #[source]
        source: ModelError,
    },
    #[error(transparent)]
    Server(#[from] ServerError),
    #[error("trace file covers {available} clients but the experiment needs {needed}")]
    TraceTooSmall { available: usize, needed: usize },
    #[error("cannot build worker pool: {0}")]
    ThreadPool(String),
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot access {path}: {source}")]
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
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("no completed runs found under {0}")]
    NoRuns(PathBuf),
    #[error("no runs labelled `{0}` to compare against")]
    MissingBaseline(String),
}
