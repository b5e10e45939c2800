use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the analysis engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid signal: {0}")]
    InvalidSignal(String),

    #[error("unsupported wav encoding: {0}")]
    UnsupportedWav(String),

    #[error("wav file {path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },

    #[error("bin index {index} out of range for spectrum with {len} bins")]
    BinOutOfRange { index: usize, len: usize },

    #[error("invalid stft parameters: {0}")]
    InvalidStft(String),

    #[error("spectra are incompatible: {0}")]
    Incompatible(String),

    #[error("classifier query budget of {budget} exhausted")]
    BudgetExhausted { budget: u64 },

    #[error("bridge protocol error: {0}")]
    Protocol(String),

    #[error("bridge timed out after {0:?}")]
    Timeout(std::time::Duration),

    #[error("invalid classifier weights: {0}")]
    Weights(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("earth mover's distance needs positive mass on both inputs")]
    ZeroMass,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
