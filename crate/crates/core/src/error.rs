use std::path::PathBuf;

use crate::lagrangian::MetricsTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("input dimension d = {0} is too small; need d >= 3 (the inverse chi-squared moment E[1/chi^2_(d)] is undefined otherwise)")]
    InputDimTooSmall(usize),

    #[error("invalid label {0}: labels must be -1 or +1")]
    InvalidLabel(f64),

    #[error("loss `{0}` is an indicator and has no usable gradient")]
    NonDifferentiable(&'static str),

    #[error("empty conditional distribution: no rows match {0}")]
    EmptyConditional(String),

    #[error("non-finite {what} at iteration {iteration}")]
    Diverged {
        what: &'static str,
        iteration: usize,
        trace: Box<MetricsTrace>,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("infeasible LP: constraint {constraint} is violated by at least {violation:.6e} at every point of the simplex")]
    Infeasible { constraint: usize, violation: f64 },

    #[error("LP solver did not converge within {0} pivots")]
    PivotLimit(usize),

    #[error("need at least {needed} points for a fit, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("cannot take log of non-positive value {value} at grid point {at}")]
    NonPositive { at: f64, value: f64 },

    #[error("empty dataset{0}")]
    EmptyDataset(String),

    #[error("unmapped label value `{0}`")]
    UnmappedLabel(String),

    #[error("column `{0}` not found in header")]
    MissingColumn(String),

    #[error("failed to parse `{value}` in column `{column}` as a number")]
    Parse { column: String, value: String },

    #[error("empty snapshot list")]
    NoSnapshots,

    #[error("unsupported format version {0}")]
    FormatVersion(u32),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}
