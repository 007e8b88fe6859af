use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    Shape {
        context: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged in {phase} at step {step}: {detail}")]
    Diverged {
        phase: String,
        step: usize,
        detail: String,
    },

    #[error("integration produced a non-finite state at step {0}")]
    IntegrationNonFinite(usize),

    #[error("ensemble needs at least 2 members, got {0}")]
    EnsembleTooSmall(usize),

    #[error("collection aborted: accepted {accepted} of {attempts} attempts")]
    LowAcceptance { accepted: usize, attempts: usize },

    #[error("format version mismatch in {path}: expected {expected}, found {found}")]
    Version {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("count mismatch in {context}: manifest says {expected}, found {found}")]
    CountMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("corrupt blob {path}: {detail}")]
    CorruptBlob { path: PathBuf, detail: String },

    #[error("environment config hash mismatch: dataset has {stored}, current config is {current}")]
    ConfigHash { stored: String, current: String },

    #[error("malformed manifest {path}: {detail}")]
    Manifest { path: PathBuf, detail: String },

    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(PathBuf),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("empty log")]
    EmptyLog,

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(context: impl Into<String>, expected: &[usize], got: &[usize]) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.to_vec(),
            got: got.to_vec(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
