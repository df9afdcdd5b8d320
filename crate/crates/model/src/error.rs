use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] candle::Error),

    #[error("invalid model config: {0}")]
    InvalidConfig(String),

    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),

    #[error("channel {channel} has {len} tokens, more than max_positions {max}")]
    ChannelTooLong { channel: usize, len: usize, max: usize },

    #[error("batch mixes channel counts ({expected} vs {found})")]
    ChannelCountMismatch { expected: usize, found: usize },

    #[error("training diverged: non-finite loss at step {step}")]
    Diverged { step: usize },

    #[error("cannot train on an empty dataset")]
    EmptyDataset,

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
