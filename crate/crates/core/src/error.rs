//! Error types shared across the solver.

use crate::subproblem::SubproblemResult;

/// Errors produced by problem construction, validation, and the solver stack.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid operator: {0}")]
    InvalidOperator(String),

    #[error("problem failed validation: {0}")]
    InvalidProblem(String),

    #[error("rank condition violated: {0}")]
    Rank(String),

    #[error("indicator set is empty (no feasible point found)")]
    EmptySet,

    /// Iterative subproblem solve hit its iteration cap. Carries the best
    /// iterate so callers can keep going with a warning.
    #[error("subproblem did not converge within {iterations} iterations (kkt residual {kkt_residual:.3e})")]
    NotConverged {
        iterations: usize,
        kkt_residual: f64,
        best: Box<SubproblemResult>,
    },

    #[error("not enough data: {0}")]
    InsufficientData(String),

    #[error("second-order certificate inconclusive: {0}")]
    Inconclusive(String),

    #[error("locomotion compile error at step {step}: {message}")]
    Compile { step: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
