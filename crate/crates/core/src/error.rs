use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(thiserror::Error, Debug)]
pub enum Error {
    #[error("non-finite entry in input: {0}")]
    NonFiniteInput(String),
    #[error("simplex solver failed: {0}")]
    SolverFailure(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid action index {0}")]
    InvalidAction(usize),
    #[error("cannot step a terminal state")]
    SteppingTerminalState,
    #[error("state space of {states} states exceeds cap of {cap}")]
    StateSpaceTooLarge { states: usize, cap: usize },
    #[error("value iteration did not converge in {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("projection radius must be positive, got {0}")]
    RadiusNonPositive(f64),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("inequality violated: {0}")]
    InequalityViolated(String),
    #[error("missing column `{column}` in {path}")]
    MissingColumn { column: String, path: PathBuf },
    #[error("empty series: {0}")]
    EmptySeries(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("numerical divergence at step {step}: loss is {loss}")]
    Divergence { step: usize, loss: f64 },
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
