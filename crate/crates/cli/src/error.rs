use std::path::Path;

use fidconv_model::ModelError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("config: {0}")]
    Config(String),

    #[error("data: {0}")]
    Data(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::Data(format!("{}: {err}", path.display()))
    }
}

impl From<fidconv_core::Error> for CliError {
    fn from(e: fidconv_core::Error) -> Self {
        match e {
            fidconv_core::Error::UnknownSetting(_)
            | fidconv_core::Error::InvalidSynthParams(_)
            | fidconv_core::Error::InvalidBm25Params { .. } => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidConfig(_) | ModelError::InvalidHyperparams(_) => CliError::Config(e.to_string()),
            ModelError::Diverged { .. } | ModelError::Tensor(_) => CliError::Numerical(e.to_string()),
            ModelError::ChannelTooLong { .. }
            | ModelError::ChannelCountMismatch { .. }
            | ModelError::EmptyDataset
            | ModelError::Checkpoint { .. }
            | ModelError::Io { .. } => CliError::Data(e.to_string()),
        }
    }
}
