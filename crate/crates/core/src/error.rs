use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("{op}: non-finite input value")]
    NonFinite { op: &'static str },

    #[error("{what} index {index} out of range (bound {bound})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("computation graph contains a cycle through nodes {0:?}")]
    Cycle(Vec<usize>),

    #[error("node {0} does not belong to this graph")]
    UnknownNode(usize),

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("parameter `{name}` has shape {found:?}, expected {expected:?}")]
    ParameterShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("parameter `{0}` requires a gradient but none was computed")]
    MissingGradient(String),

    #[error("parameter stores disagree on `{0}`")]
    StoreMismatch(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("schema error at {path}: {msg}")]
    Schema { path: String, msg: String },

    #[error("no legal span to decode")]
    NoLegalSpan,

    #[error("duplicate prediction for question `{0}`")]
    DuplicatePrediction(String),

    #[error("missing prediction for question `{0}`")]
    MissingPrediction(String),

    #[error("inconsistent gold for `{0}`: unanswerable question carries a span")]
    InconsistentGold(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

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

    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            msg: msg.into(),
        }
    }
}
