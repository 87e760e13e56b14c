use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: axis {axis} out of range for rank {rank}")]
    Axis {
        op: &'static str,
        axis: usize,
        rank: usize,
    },

    #[error("fully masked logits")]
    FullyMasked,

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),

    #[error("function returned NaN")]
    NanOutput,

    #[error("size mismatch: {0}")]
    Size(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("agent {agent} chose unavailable action {action}")]
    UnavailableAction { agent: usize, action: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("unknown {kind} `{token}`")]
    UnknownName { kind: &'static str, token: String },

    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },

    #[error("step grids differ: {0}")]
    GridMismatch(String),

    #[error("refusing to overwrite existing output {0}")]
    OutputExists(String),

    #[error("malformed {what}: {message}")]
    Format { what: &'static str, message: String },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, err: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            message: err.to_string(),
        }
    }
}
