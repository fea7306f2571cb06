use thiserror::Error;

/// Errors raised by the numeric and modeling layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: left {left:?} vs right {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular denominator in {op} (value {value:e})")]
    Singularity { op: &'static str, value: f64 },

    #[error("empty mask: {0}")]
    EmptyMask(String),

    #[error("non-finite value encountered in {op} at step {step}")]
    NonFinite { op: &'static str, step: usize },

    #[error("unknown phone id {id} (vocabulary size {vocab})")]
    UnknownPhone { id: usize, vocab: usize },

    #[error("alignment invariant violated: {0}")]
    Alignment(String),

    #[error("covariance not positive semidefinite (min eigenvalue {min_eig:e})")]
    NotPsd { min_eig: f64 },

    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    #[error("format error in {path}: {msg}")]
    Format { path: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
