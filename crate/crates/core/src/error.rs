//! Error type shared by the whole crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong across loading, solving, sampling, and
/// summarizing. Variants split into two broad classes: invalid inputs
/// (caller mistakes, CLI exit code 2) and numerical failures (CLI exit
/// code 3).
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("duplicate sample id `{0}`")]
    DuplicateSampleId(String),

    #[error("source {source_index} row {row} has no observed entries")]
    FullyMissingRow { source_index: usize, row: usize },

    #[error("all-zero matrix: noise level is undefined")]
    ZeroMatrix,

    #[error("truth has zero norm: relative error is undefined")]
    ZeroNormTruth,

    #[error(
        "solver did not converge in {iterations} sweeps (objective {objective:.6e}, last relative decrease {gap:.3e})"
    )]
    SolverDidNotConverge {
        iterations: usize,
        objective: f64,
        gap: f64,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    /// True when the error reports a bad input rather than a numerical
    /// breakdown; drives the CLI exit-code contract.
    pub fn is_invalid_input(&self) -> bool {
        !matches!(
            self,
            Error::Numerical(_) | Error::SolverDidNotConverge { .. }
        )
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
