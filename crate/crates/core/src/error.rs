use thiserror::Error;

/// Errors raised by the ladder-walk library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LadderError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("window too large to enumerate: {edges} edges (limit {limit})")]
    Feasibility { edges: usize, limit: usize },
    #[error("constraints admit no crossing configuration")]
    NoCrossing,
    #[error("terminals are not connected by open edges")]
    Disconnected,
    #[error("singular linear system (pivot {0:e})")]
    Singular(f64),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("walk left the safe window at step {step} (x = {x})")]
    Boundary { step: usize, x: i64 },
    #[error("cycle source exhausted after {0} cycles")]
    SourceExhausted(usize),
    #[error("insufficient data: {0}")]
    Insufficient(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, LadderError>;

impl From<std::io::Error> for LadderError {
    fn from(e: std::io::Error) -> Self {
        LadderError::Io(e.to_string())
    }
}
