//! Fusion-in-decoder transformer: shared per-channel encoder, fused memory,
//! autoregressive decoder, training loop, decoding and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod generate;
pub mod gradcheck;
pub mod model;
mod ops;
pub mod train;

pub use candle::{DType, Device, Tensor};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{Hyperparams, ModelConfig, Profile};
pub use error::{ModelError, Result};
pub use generate::{generate, Strategy};
pub use gradcheck::{grad_check, random_record, GradCheckReport};
pub use model::{FidModel, FusedMemory};
pub use train::{train, LogEntry};
