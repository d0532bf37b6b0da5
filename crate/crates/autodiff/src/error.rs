use thiserror::Error;

/// Errors raised while building or differentiating a tape.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch, expected {expected}, got {actual}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        actual: String,
    },
    #[error("unknown op kind `{0}`")]
    UnknownOp(String),
    #[error("{op}: expected {expected} input(s), got {actual}")]
    Arity {
        op: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("{op}: invalid attribute: {message}")]
    InvalidAttr { op: &'static str, message: String },
    #[error("{op}: index {index} out of range for extent {extent}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        extent: usize,
    },
    #[error("node {0} does not belong to this tape")]
    UnknownNode(usize),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite value in `{0}`")]
    NonFinite(String),
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
}

pub type Result<T> = std::result::Result<T, AutodiffError>;
