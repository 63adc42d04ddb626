//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is singular or numerically rank-deficient (condition estimate {condition:.3e})")]
    Singular { condition: f64 },

    #[error("degenerate chain: left null space has dimension != 1")]
    DegenerateChain,

    #[error("invalid phase-type representation: {}", .0.join("; "))]
    InvalidPhaseType(Vec<String>),

    #[error("invalid batch arrival process: {}", .0.join("; "))]
    InvalidArrival(Vec<String>),

    #[error("irreparable arrival model: {0}")]
    Irreparable(String),

    #[error("invalid threshold policy: {0}")]
    InvalidPolicy(String),

    #[error("state space too large: {states} states exceeds the dense cap {cap} (K={k}, R={r}; the per-level dimension grows like R^(i-1))")]
    StateSpaceCap {
        states: usize,
        cap: usize,
        k: usize,
        r: usize,
    },

    #[error("solver requires a block-tridiagonal generator; found a block at offset {offset}")]
    WrongSolver { offset: usize },

    #[error("stationary solve failed: {0}")]
    SolveFailed(String),

    #[error("conditional measure undefined: {0}")]
    Undefined(String),

    #[error("incomplete performance report: {0}")]
    IncompleteReport(String),

    #[error("invalid model file: {0}")]
    ModelFile(String),

    #[error("invalid trace input: {0}")]
    Trace(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
