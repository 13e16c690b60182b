use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GathError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: parse error: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("decode error: {0}")]
    Decode(String),
    #[error("channel error: expected 3 channels, found {0}")]
    Channels(usize),
    #[error("arity error: expected {expected} values, found {found}")]
    Arity { expected: usize, found: usize },
    #[error("range error: value {value} at index {index} outside [0,1]")]
    Range { index: usize, value: f64 },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("sampling error: {0}")]
    Sampling(String),
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("non-finite loss term `{term}` at iteration {iteration}")]
    NonFinite { term: &'static str, iteration: u64 },
    #[error("checkpoint integrity error: {0}")]
    Integrity(String),
    #[error("checkpoint incompatible: {0}")]
    Incompatible(String),
    #[error("config error: {0}")]
    Config(String),
}

impl GathError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GathError::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable short name of the variant, for machine-readable output.
    pub fn kind(&self) -> &'static str {
        match self {
            GathError::Io { .. } => "io",
            GathError::Parse { .. } => "parse",
            GathError::Schema(_) => "schema",
            GathError::Decode(_) => "decode",
            GathError::Channels(_) => "channels",
            GathError::Arity { .. } => "arity",
            GathError::Range { .. } => "range",
            GathError::Shape(_) => "shape",
            GathError::Precondition(_) => "precondition",
            GathError::Sampling(_) => "sampling",
            GathError::Label { .. } => "label",
            GathError::NonFinite { .. } => "non_finite",
            GathError::Integrity(_) => "integrity",
            GathError::Incompatible(_) => "incompatible",
            GathError::Config(_) => "config",
        }
    }
}

pub type Result<T, E = GathError> = std::result::Result<T, E>;
