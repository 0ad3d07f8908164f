use thiserror::Error;

use crate::solvers::SolveTrace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid feasible set: {0}")]
    InvalidSet(String),

    #[error("projection did not converge after {iterations} sweeps (residual {residual:.3e})")]
    ProjectionFailed {
        iterations: usize,
        residual: f64,
        last_iterate: Vec<f64>,
    },

    #[error("halfspace normal is zero")]
    ZeroNormal,

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("inadmissible parameter: {0}")]
    Inadmissible(String),

    #[error("invalid problem data: {0}")]
    InvalidProblem(String),

    #[error("design matrix is rank deficient")]
    RankDeficient,

    #[error("learning problem is not weak sharp (sampled modulus {0:.3e})")]
    NotSharp(f64),

    #[error("iterates diverged at k = {k}")]
    Diverged { k: usize, trace: Box<SolveTrace> },

    #[error("config error in {field}: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
