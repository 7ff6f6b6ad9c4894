use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("line {line}: self-loop on node {node}")]
    SelfLoop { line: usize, node: usize },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: edge weight must be positive and finite, got {weight}")]
    BadWeight { line: usize, weight: f64 },

    #[error("node id {id} out of range for graph with {n} nodes")]
    NodeOutOfRange { id: usize, n: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("undefined conductance: {0}")]
    UndefinedConductance(&'static str),

    #[error("push on node {node} without excess mass")]
    NoExcess { node: usize },

    #[error("mass trapped at isolated node {node}")]
    MassTrapped { node: usize },

    #[error("reference solver did not converge: projected gradient norm {grad_norm:e} after {iterations} iterations")]
    ReferenceNotConverged { iterations: usize, grad_norm: f64 },

    #[error("{path}: {message}")]
    Io { path: String, message: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{0}")]
    Degenerate(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
