use std::path::PathBuf;

use crate::morpho::Invalid;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("genome text: {0}")]
    GenomeFormat(String),

    #[error("invalid genome: {0}")]
    InvalidGenome(Invalid),

    #[error("actuator mismatch: policy has {expected} actuators keyed differently from the body's {actual}")]
    ActuatorMismatch { expected: usize, actual: usize },

    #[error("controller kind mismatch: {0}")]
    KindMismatch(String),

    #[error("observation of width {width} exceeds padded input width {pad}")]
    ObservationTooWide { width: usize, pad: usize },

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("non-finite loss during update")]
    NonFiniteLoss,

    #[error("{path}: {source}")]
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
}

pub type Result<T> = std::result::Result<T, Error>;
