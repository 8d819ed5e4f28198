use thiserror::Error;

use crate::model::Violation;
use crate::neighborhood::CapacityError;
use crate::rate::{EvalError, ParseError};

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model:\n{}", format_violations(.0))]
    Validation(Vec<Violation>),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Capacity(#[from] CapacityError),
    #[error("integration failed at t={t}: {reason}")]
    Numerical { t: f64, reason: String },
    #[error("{0}")]
    InvalidArgument(String),
    #[error("operation requires a materialized neighborhood space")]
    ApproximateMode,
    #[error("refinement did not converge within {0} iterations")]
    IterationLimit(usize),
    #[error("trajectories are not comparable: {0}")]
    GridMismatch(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("malformed json: {0}")]
    Json(#[from] serde_json::Error),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|v| format!("  - {v}")).collect::<Vec<_>>().join("\n")
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
