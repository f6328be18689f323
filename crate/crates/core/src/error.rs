use thiserror::Error;

/// Errors raised by the learners, environments and harness.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid simplex strategy: {0}")]
    InvalidSimplex(String),
    #[error("invalid treeplex strategy: {0}")]
    InvalidTreeplex(String),
    #[error("invalid cost vector: {0}")]
    InvalidCost(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("action {action} out of range (have {count})")]
    ActionOutOfRange { action: usize, count: usize },
    #[error("played action {0} has zero probability")]
    ZeroProbability(usize),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("solver did not converge: achieved gap {gap:e} after {iterations} iterations")]
    NoConvergence { gap: f64, iterations: usize },
    #[error("invalid game: {0}")]
    InvalidGame(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unknown {0}")]
    Unknown(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
