use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("record {index}: {message}")]
    InvalidRecord { index: usize, message: String },

    #[error("unknown PII category {0:?}")]
    UnknownCategory(String),

    #[error("invalid span [{start}, {end}) for text of length {len}")]
    SpanOutOfBounds { start: usize, end: usize, len: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid regex {pattern:?}: {source}")]
    Regex {
        pattern: String,
        #[source]
        source: regex::Error,
    },

    #[error("annotation sets disagree on post ids: {0}")]
    PostIdMismatch(String),

    #[error("no record for post {0:?}")]
    MissingRecord(String),

    #[error("output marker {0:?} not found in response")]
    NoMarker(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("{0}")]
    Empty(&'static str),

    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("zero-norm vector")]
    ZeroNorm,

    #[error("length mismatch in {id:?}: {tokens} tokens, {labels} label sets")]
    LengthMismatch { id: String, tokens: usize, labels: usize },

    #[error("unknown survey set {0}")]
    UnknownSet(String),

    #[error("every temperature in the grid was excluded")]
    NoUsableTemperature,

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
