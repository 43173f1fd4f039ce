use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("numeric domain error in {op}: {detail}")]
    NumericDomain { op: &'static str, detail: String },

    #[error("label {label} at index {index} is outside [0, {classes})")]
    Label { index: usize, label: usize, classes: usize },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("format error in {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("unsupported {what} version {found} (this build reads version {expected})")]
    UnsupportedVersion {
        what: &'static str,
        found: u32,
        expected: u32,
    },

    #[error("checkpoint is truncated: {0}")]
    Truncated(String),

    #[error("checksum mismatch: stored {stored}, computed {computed}")]
    Checksum { stored: String, computed: String },

    #[error("non-finite loss at step {step} (epoch {epoch}): l_c={l_c} l_d={l_d} lambda_d={lambda_d} eta_p={eta_p}")]
    NonFinite {
        step: usize,
        epoch: usize,
        l_c: f64,
        l_d: f64,
        lambda_d: f64,
        eta_p: f64,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Format { .. } | Error::Label { .. } | Error::Io { .. } => 3,
            Error::UnsupportedVersion { .. } | Error::Truncated(_) | Error::Checksum { .. } => 3,
            Error::NonFinite { .. } | Error::NumericDomain { .. } => 4,
            Error::Shape { .. } | Error::Contract(_) => 2,
        }
    }
}
