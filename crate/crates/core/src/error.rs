//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid environment: {0}")]
    InvalidEnv(String),

    #[error("solver did not converge after {iterations} iterations (residual {residual:e}): {context}")]
    NoConvergence {
        context: String,
        iterations: usize,
        residual: f64,
    },

    #[error("degenerate benchmarks: competitive and monopoly payoffs coincide")]
    DegenerateBenchmarks,

    #[error("policy/grid mismatch: {0}")]
    GridMismatch(String),

    #[error("empty category '{0}' in policy pool")]
    EmptyCategory(String),

    #[error("redraw cap exhausted for meta-strategy '{0}'; the pool is too small to avoid partner links")]
    RedrawExhausted(String),

    #[error("meta-game size {0} exceeds the supported maximum of 16 strategies")]
    UnsupportedSize(usize),

    #[error("oracle error: {0}")]
    Oracle(String),

    #[error("response parse error: {0}")]
    ResponseParse(String),

    #[error("pool file error: {0}")]
    PoolFormat(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
