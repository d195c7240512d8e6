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

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("row {row}: expected {expected} fields, found {found}")]
    RowWidth { row: usize, expected: usize, found: usize },

    #[error("duplicate record id `{0}`")]
    DuplicateId(String),

    #[error("unknown record id `{id}` in table `{table}`")]
    UnknownId { table: String, id: String },

    #[error("duplicate pair ({0}, {1})")]
    DuplicatePair(String, String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("arity mismatch: model expects {expected} attributes, record has {actual}; align the table with align_arity first")]
    Arity { expected: usize, actual: usize },

    #[error("requested dimension {requested} exceeds the maximum feasible dimension {max}")]
    DimensionTooLarge { requested: usize, max: usize },

    #[error("missing intermediate representations for {count} keys, first: {first:?}")]
    MissingIrs { count: usize, first: Vec<String> },

    #[error("incompatible model file: {0}")]
    ModelFormat(String),

    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { loss: f64, epoch: usize, batch: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training set has a single class (label {0}); both duplicates and non-duplicates are required")]
    SingleClass(u8),

    #[error("candidate pool has {pool} pairs, need at least {needed}; increase K")]
    PoolTooSmall { pool: usize, needed: usize },

    #[error("probability {0} outside [0, 1]")]
    Probability(f64),

    #[error("no prediction for {} truth pairs, first: {first:?}", count)]
    MissingPredictions { count: usize, first: Vec<(String, String)> },

    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
