use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad file format: {0}")]
    Format(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("insufficient pool: {0}")]
    InsufficientPool(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("attention mask row {row} has no unmasked entry")]
    EmptyMaskRow { row: usize },

    #[error("non-finite activation in layer {layer}")]
    NonFinite { layer: usize },

    #[error("training diverged at step {step}")]
    Diverged { step: usize },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("context length {requested} exceeds trained length {trained}")]
    LengthExtrapolation { requested: usize, trained: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
