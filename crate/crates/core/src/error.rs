use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes or sizes that do not line up. Raised before any computation runs.
    #[error("shape error in layer `{layer}`: {detail}")]
    Shape { layer: String, detail: String },

    #[error("model/arena mismatch: {0}")]
    ArenaMismatch(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported version {found} (expected {expected})")]
    VersionMismatch { expected: u16, found: u16 },

    #[error("file truncated while reading {what}")]
    Truncated { what: String },

    #[error("payload mismatch in layer `{layer}`: {detail}")]
    Payload { layer: String, detail: String },

    #[error("{count} trailing bytes after the last record")]
    TrailingBytes { count: usize },

    #[error("unknown record tag {tag:#04x} at record {index}")]
    UnknownTag { tag: u8, index: usize },

    #[error("invalid IDX file {path}: {detail}")]
    Idx { path: PathBuf, detail: String },

    #[error("invalid fault: {0}")]
    InvalidFault(String),

    #[error("invalid sweep: {0}")]
    InvalidSweep(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(layer: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Shape {
            layer: layer.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
