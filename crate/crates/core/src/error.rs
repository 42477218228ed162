//! Error types shared across the crate.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failures while reading or validating corpora, catalogs and episodes.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {path} at line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid field `{field}` in relation {relation} instance {index}: {reason}")]
    Field {
        relation: String,
        index: usize,
        field: &'static str,
        reason: String,
    },
    #[error("relation {relation} instance {index}: {reason}")]
    Validation {
        relation: String,
        index: usize,
        reason: String,
    },
    #[error("duplicate relation id {0}")]
    DuplicateRelation(String),
    #[error("relation {0} has no catalog entry")]
    MissingCatalogEntry(String),
    #[error("relation {0} is empty or has an empty name")]
    EmptyRelation(String),
    #[error("unknown relation id {0}")]
    UnknownRelation(String),
    #[error("requested {requested} relations but the corpus has {available}")]
    NotEnoughRelations { requested: usize, available: usize },
    #[error("relation {relation} has {available} instances, need at least {required}")]
    NotEnoughInstances {
        relation: String,
        available: usize,
        required: usize,
    },
    #[error("invalid episode request: {0}")]
    InvalidRequest(String),
}

/// Failures of the encoder layer.
#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("frozen embedding store has no record for key {0}")]
    MissingKey(String),
    #[error("dimension mismatch for {key}: expected d = {expected}, found {found}")]
    DimensionMismatch {
        key: String,
        expected: usize,
        found: usize,
    },
    #[error("malformed embedding record {key}: {reason}")]
    Malformed { key: String, reason: String },
    #[error("token sequence is empty")]
    EmptySequence,
}

/// Numerical failures: degenerate representations, non-finite values,
/// strict-mode domain errors.
#[derive(Debug, Error)]
pub enum NumericError {
    #[error("class representation {index} has zero norm")]
    DegenerateRepresentation { index: usize },
    #[error("non-finite value at {node}")]
    NonFinite { node: String },
    #[error("strict contrastive loss is undefined: {0}")]
    Domain(String),
    #[error("loss diverged: {value} exceeds {limit}")]
    Divergence { value: f64, limit: f64 },
}

/// Crate-level error.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("cannot write output: {0}")]
    Output(String),
}

impl DataError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, err: &serde_json::Error) -> Self {
        DataError::Parse {
            path: path.into(),
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}
