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

    #[error("line {line}: {message}")]
    Line { line: usize, message: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("n-gram of length {len} exceeds the postings bound {max}")]
    LengthBound { len: usize, max: usize },

    #[error("pair not present in task-gram table: {0}")]
    PairNotInTable(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("statistics: {0}")]
    Statistics(String),

    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: usize, message: String },

    #[error("missing gradient vector for checkpoint {checkpoint}, {id}")]
    MissingGradient { checkpoint: usize, id: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

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

    /// Short machine-readable code, used by the CLI's error JSON.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Line { .. } => "malformed_input",
            Error::Empty(_) => "empty_input",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::LengthBound { .. } => "length_bound",
            Error::PairNotInTable(_) => "pair_not_in_table",
            Error::Format(_) => "format",
            Error::Validation(_) => "validation",
            Error::Statistics(_) => "statistics",
            Error::Transport { .. } => "transport",
            Error::MissingGradient { .. } => "missing_gradient",
            Error::Dimension { .. } => "dimension_mismatch",
            Error::Json(_) => "json",
        }
    }
}
