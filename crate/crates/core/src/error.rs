//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty prompt")]
    EmptyPrompt,
    #[error("empty context")]
    EmptyContext,
    #[error("empty run")]
    EmptyRun,
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("window overflow: {requested} rows exceed capacity {capacity}")]
    WindowOverflow { requested: usize, capacity: usize },
    #[error("gather incomplete")]
    GatherIncomplete,
    #[error("no gather scheduled")]
    NoGatherScheduled,
    #[error("gather already in flight")]
    GatherInFlight,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("frequency table required for the static top-k policy")]
    MissingFrequencyTable,
    #[error("trace misaligned: {0}")]
    TraceMisaligned(String),
    #[error("decode mismatch against the autoregressive reference")]
    DecodeMismatch,
    #[error("bad weights sidecar: {0}")]
    Sidecar(String),
    #[error("corpus: {0}")]
    Corpus(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad user-supplied configuration, which the
    /// CLI reports with exit code 2.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_) | Error::MissingFrequencyTable | Error::EmptyPrompt
        )
    }
}
