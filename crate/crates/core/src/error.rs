use thiserror::Error;

/// Errors produced by synthesis, evaluation and simulation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("degenerate HOCBF: L_g L_f^(k-1) h vanishes at {at:?}")]
    DegenerateHocbf { at: Vec<f64> },

    #[error("infeasible filter: constraint gradient vanishes with negative constraint value {value}")]
    InfeasibleFilter { value: f64 },

    #[error("matrix is not symmetric positive definite")]
    NotSpd,

    #[error("matrix is not positive semi-definite (eigenvalue {eigenvalue})")]
    NotPsd { eigenvalue: f64 },

    #[error("finite-difference step underflow at {at:?}")]
    StepUnderflow { at: Vec<f64> },

    #[error("linear system is singular (condition estimate {condition:e})")]
    SingularSystem { condition: f64 },

    #[error("successive approximation diverged at iteration {iteration} (|c|_inf = {norm:e})")]
    Diverged { iteration: usize, norm: f64 },

    #[error("pair (A, B) is not stabilizable")]
    NotStabilizable,

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("invalid argument: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
