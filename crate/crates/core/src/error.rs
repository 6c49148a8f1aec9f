use thiserror::Error;

/// Errors produced by the planning library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("root is not bracketed: f(lo) = {f_lo}, f(hi) = {f_hi}")]
    NoBracket { f_lo: f64, f_hi: f64 },
    #[error("no convergence after {iterations} iterations: {context}")]
    NoConvergence { iterations: usize, context: String },
    #[error("argument out of domain: {0}")]
    Domain(String),
    #[error("empty input")]
    EmptyInput,
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { got: usize, need: usize },

    #[error("invalid cell table: {0}")]
    InvalidTable(String),
    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse { row: usize, column: String, message: String },
    #[error("missing value at row {row}, column `{column}`")]
    MissingValue { row: usize, column: String },
    #[error("unknown level `{value}` at row {row}, column `{column}`")]
    UnknownLevel { row: usize, column: String, value: String },
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("variable `{0}` has zero variance")]
    ZeroVariance(String),

    #[error("all predictor weights are zero")]
    AllZeroWeights,
    #[error("target C-statistic {target} unreachable (C = {reached} at delta = {delta})")]
    DeltaUnreachable { target: f64, reached: f64, delta: f64 },
    #[error("degenerate risks: {0}")]
    DegenerateRisks(String),

    #[error("width {width} unachievable at risk {risk} (supremum {supremum})")]
    Unachievable { risk: f64, width: f64, supremum: f64 },
    #[error("no interior risk threshold: utilities must satisfy u1 > u3 and u4 > u2")]
    NoThreshold,

    #[error("all outcomes are equal")]
    AllSameOutcome,
    #[error("separation detected at iteration {iteration}")]
    Separation { iteration: usize },
    #[error("{failed} of {reps} replicates failed")]
    TooFewSuccessfulReps { failed: usize, reps: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors that signal an infeasible target rather than bad numerics.
    pub fn is_infeasible(&self) -> bool {
        matches!(
            self,
            Error::DeltaUnreachable { .. } | Error::Unachievable { .. } | Error::NoThreshold
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
