use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: non-finite value in output")]
    NumericOverflow { op: &'static str },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("empty feature map: {0}")]
    EmptyFeature(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("config line {line}: {message}")]
    ConfigLine { line: usize, message: String },

    #[error("finite-difference oracle invalid: {0}")]
    OracleInvalid(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("training diverged at epoch {epoch}, batch seed {batch_seed:#018x}: loss is not finite")]
    Diverged { epoch: usize, batch_seed: u64 },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Stable machine-greppable code, printed by the command-line front end.
    pub fn code(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } => "E_SHAPE",
            Error::NumericOverflow { .. } => "E_NUMERIC",
            Error::Contract(_) => "E_CONTRACT",
            Error::EmptyFeature(_) => "E_EMPTY",
            Error::Config(_) | Error::ConfigLine { .. } => "E_CONFIG",
            Error::OracleInvalid(_) => "E_ORACLE",
            Error::Io { .. } => "E_IO",
            Error::Format { .. } | Error::Csv(_) => "E_FORMAT",
            Error::Diverged { .. } => "E_DIVERGED",
        }
    }
}
