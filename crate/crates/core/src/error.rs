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

    #[error("{0}")]
    IoBare(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("parse error at row {row}, column {column} ('{name}'): {message}")]
    Parse {
        row: usize,
        column: usize,
        name: String,
        message: String,
    },

    #[error("unknown column '{0}'")]
    UnknownColumn(String),

    #[error("unknown relation '{0}'")]
    UnknownRelation(String),

    #[error("unknown attribute '{0}'")]
    UnknownAttribute(String),

    #[error("duplicate {what} '{name}'")]
    Duplicate { what: &'static str, name: String },

    #[error("type mismatch: {0}")]
    TypeMismatch(String),

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("invalid query: {0}")]
    InvalidQuery(String),

    #[error("query {index}: {source}")]
    InBatch {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("layout hash mismatch: model expects {expected}, input has {got}")]
    LayoutMismatch { expected: String, got: String },

    #[error(
        "kernel matrix factorization failed (n = {n}, mean diagonal = {mean_diag:e}, \
         last jitter = {jitter:e}, non-positive pivot at {pivot})"
    )]
    Factorization {
        n: usize,
        mean_diag: f64,
        jitter: f64,
        pivot: usize,
    },

    #[error("malformed {what}: {message}")]
    Format { what: &'static str, message: String },

    #[error("unsupported {what} version {found} (expected {expected})")]
    Version {
        what: &'static str,
        found: u32,
        expected: u32,
    },

    #[error("{what} hash mismatch: expected {expected}, got {got}")]
    HashMismatch {
        what: &'static str,
        expected: String,
        got: String,
    },

    #[error("self-check failed: {0}")]
    CheckFailed(String),

    #[error("selection pool exhausted: need {needed}, have {available}")]
    PoolExhausted { needed: usize, available: usize },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable variant name, used in structured error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } | Error::IoBare(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
            Error::Empty(_) => "empty",
            Error::Parse { .. } => "parse",
            Error::UnknownColumn(_) => "unknown_column",
            Error::UnknownRelation(_) => "unknown_relation",
            Error::UnknownAttribute(_) => "unknown_attribute",
            Error::Duplicate { .. } => "duplicate",
            Error::TypeMismatch(_) => "type_mismatch",
            Error::InvalidSpec(_) => "invalid_spec",
            Error::InvalidQuery(_) => "invalid_query",
            Error::InBatch { source, .. } => source.kind(),
            Error::InvalidArgument(_) => "invalid_argument",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::LayoutMismatch { .. } => "layout_mismatch",
            Error::Factorization { .. } => "factorization",
            Error::Format { .. } => "format",
            Error::Version { .. } => "version",
            Error::HashMismatch { .. } => "hash_mismatch",
            Error::CheckFailed(_) => "check_failed",
            Error::PoolExhausted { .. } => "pool_exhausted",
        }
    }

    pub(crate) fn format(what: &'static str, message: impl Into<String>) -> Self {
        Error::Format {
            what,
            message: message.into(),
        }
    }
}
