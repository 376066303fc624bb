use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {key}: {reason}")]
    InvalidConfig { key: String, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("eigensolver failed for dimension {dimension} (LAPACK info = {info})")]
    Eigensolver { dimension: usize, info: i32 },

    #[error("memory budget exceeded: {required} amplitudes requested, budget is {budget}")]
    BudgetExceeded { required: usize, budget: usize },

    #[error("marginal probability has imaginary residue {residue:e} (subset mask {mask:#b})")]
    ImaginaryResidue { residue: f64, mask: u32 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl Error {
    /// Short stable tag for machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidConfig { .. } => "invalid_config",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Eigensolver { .. } => "eigensolver",
            Error::BudgetExceeded { .. } => "budget_exceeded",
            Error::ImaginaryResidue { .. } => "imaginary_residue",
            Error::Io { .. } => "io",
            Error::Json { .. } => "json",
            Error::Csv { .. } => "csv",
        }
    }
}
