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

    #[error("failed to parse {what}: {source}")]
    Parse {
        what: String,
        #[source]
        source: serde_json::Error,
    },

    /// A binary container is malformed: bad magic, version, truncation or overrun.
    #[error("malformed {container} file: {reason}")]
    Format { container: &'static str, reason: String },

    /// An annotation document violates an invariant.
    #[error("invalid annotations (image {image_id}, {field}): {reason}")]
    Annotation { image_id: u64, field: String, reason: String },

    #[error("invalid taxonomy: {0}")]
    Taxonomy(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape { op: &'static str, left: Vec<usize>, right: Vec<usize> },

    #[error("missing feature record: {0}")]
    MissingRecord(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("unknown {kind} `{name}` (available: {available})")]
    UnknownName { kind: &'static str, name: String, available: String },

    #[error("infeasible request: {0}")]
    Infeasible(String),

    #[error("empty input: {0}")]
    Empty(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(container: &'static str, reason: impl Into<String>) -> Self {
        Error::Format { container, reason: reason.into() }
    }

    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape { op, left: left.to_vec(), right: right.to_vec() }
    }
}
