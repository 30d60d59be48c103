use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("{what} = {value} outside admissible range [{lo}, {hi}]")]
    OutOfRange {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("design matrix is rank deficient: {0}")]
    RankDeficient(String),

    #[error("fitted flow-to-power curve is not increasing on [{lo}, {hi}]")]
    NonMonotone { lo: f64, hi: f64 },

    #[error("signal row {row}: {reason}")]
    BadSignalRow { row: usize, reason: String },

    #[error("dataset row {row}: {reason}")]
    BadDataRow { row: usize, reason: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("cooling-mode assumption violated: {0}")]
    CoolingAssumption(String),

    #[error("reserve of step {step} cannot be delivered inside the flow limits: {reason}")]
    InfeasibleReserve { step: usize, reason: String },

    #[error("identification infeasible ({class}): {detail}")]
    Infeasible { class: &'static str, detail: String },

    #[error("{level} failed at {timestamp}: {source}")]
    Level {
        level: &'static str,
        timestamp: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }
}
