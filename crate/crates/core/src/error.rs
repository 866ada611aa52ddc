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

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("row {row}: {field} = {value} is outside [0, 1]")]
    AccuracyRange {
        row: u64,
        field: &'static str,
        value: f64,
    },

    #[error("row {row}: {message}")]
    InvalidRecord { row: u64, message: String },

    #[error("duplicate experiment records: {}", .0.join("; "))]
    DuplicateKey(Vec<String>),

    #[error("store is locked by another writer ({0})")]
    StoreLocked(PathBuf),

    #[error("no records match {0}")]
    EmptySelection(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("parameters are not on the increasing branch: {0}")]
    NonMonotone(String),

    #[error("need at least {needed} points, got {got}")]
    InsufficientPoints { needed: usize, got: usize },

    #[error("singular jacobian: {0}")]
    SingularJacobian(String),

    #[error("every candidate family failed: {}", .0.join("; "))]
    AllCandidatesFailed(Vec<String>),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("filter {0} has (near) zero norm")]
    DegenerateFilter(String),

    #[error(
        "loss threshold {threshold} not reached within radius {censored_radius} in any direction"
    )]
    ThresholdUnreachable {
        threshold: f64,
        censored_radius: f64,
    },

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the caller's input rather than the environment.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io { .. } | Error::StoreLocked(_))
    }
}
