use thiserror::Error;

/// Errors raised by the simulation and estimation layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("point {0} outside [0,1)")]
    Domain(f64),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("malformed map: {0}")]
    Structural(String),

    #[error("numerical failure: {message} (residual {residual:e})")]
    Numerical { message: String, residual: f64 },

    #[error("state error: {0}")]
    State(String),

    #[error("unsupported parameter: {0}")]
    Unsupported(String),

    #[error("conditional probability {prob} below floor {floor} at step {step}")]
    Contract { step: usize, prob: f64, floor: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
