use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown category `{0}`")]
    UnknownCategory(String),

    #[error("scene is not in canonical order at index {0}")]
    Unsorted(usize),

    #[error("too many objects: {count} exceeds the limit of {max}")]
    TooManyObjects { count: usize, max: usize },

    #[error("malformed sequence bundle: {0}")]
    MalformedBundle(String),

    #[error("degenerate polygon: {0}")]
    DegeneratePolygon(String),

    #[error("unsatisfiable generator config: {0}")]
    Unsatisfiable(String),

    #[error("parameter `{0}` has no gradient")]
    MissingGradient(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("conditioning mismatch: {0}")]
    ModeMismatch(String),

    #[error("checkpoint checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    Checksum { stored: u32, computed: u32 },

    #[error("incompatible checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
