use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("oracle returned a non-finite {what}")]
    NonFiniteOracle { what: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("only third-order models are supported (got p = {0})")]
    UnsupportedOrder(u32),

    #[error("matrix is not symmetric (asymmetry {asymmetry:.3e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:.3e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },

    #[error("{path}:{line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("parameter check failed: {0}")]
    Parameters(String),

    #[error("model minimization did not converge after {iters} Newton steps (gradient norm {grad_norm:.3e})")]
    ModelNonConvergence { iters: usize, grad_norm: f64 },

    #[error(
        "BDGM hit its iteration cap ({iters}): last residual {residual:.3e} vs threshold {threshold:.3e}"
    )]
    BdgmIterationCap {
        iters: usize,
        residual: f64,
        threshold: f64,
    },

    /// The point is already more accurate than the inner solver can certify:
    /// `γ‖∇f(z)‖ ≤ δ`, or the inner residual stalled at its noise floor.
    #[error("inner accuracy floor reached: gradient norm {grad_norm:e} cannot be certified below {floor:e}")]
    AccuracyFloor {
        grad_norm: f64,
        floor: f64,
        /// The iterate at which the floor was detected.
        point: Vec<f64>,
    },

    #[error("bisection bracket is invalid: {0}")]
    InvalidBracket(String),

    #[error("lambda search failed: {0}")]
    LambdaSearch(String),

    #[error("middle-level solve did not reach the outer accuracy within {0} iterations")]
    MiddleLevel(usize),

    #[error("gradient descent diverged at step {step} (f = {value:.3e})")]
    Divergence { step: usize, value: f64 },

    #[error("rate fit needs at least 3 usable points, found {0}")]
    TooFewPoints(usize),

    #[error("reference solve exhausted its budget of {budget} iterations (gradient norm {grad_norm:.3e})")]
    BudgetExhausted { budget: usize, grad_norm: f64 },

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
