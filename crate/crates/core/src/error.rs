use thiserror::Error;

/// Errors produced by the design, equalization and simulation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unknown channel preset `{0}`")]
    UnknownChannel(String),

    #[error("all-pass deviation {deviation:.3e} exceeds tolerance {tolerance:.3e}")]
    AllPassDeviation { deviation: f64, tolerance: f64 },

    #[error("feedback correlation matrix is singular")]
    SingularFeedbackMatrix,

    #[error("prefilter truncation changes the rate by {relative:.3e} (limit {limit:.3e})")]
    TruncationLoss { relative: f64, limit: f64 },

    #[error("1 + G(w) = {min:.3e} violates the positivity domain")]
    DomainViolation { min: f64 },

    #[error("optimizer did not converge after {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("trellis would need {states} states (budget {budget})")]
    StateBudget { states: usize, budget: usize },

    #[error("block too short: {0}")]
    BlockTooShort(String),

    #[error("filters and trellis metric disagree: {0}")]
    MetricMismatch(String),
}

pub type Result<T> = std::result::Result<T, Error>;
