use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Small enough to train on a laptop CPU.
    Desk,
    /// The 12+12-layer mBART-large shape. Recorded for reference; far too
    /// large to train here.
    Paper,
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        })
    }
}

impl FromStr for Profile {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(ModelError::InvalidConfig(format!("unknown profile {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ffn: usize,
    pub vocab_size: usize,
    /// Encoder positions per channel; positions restart in every channel.
    pub max_positions: usize,
    /// Decoder positions (BOS plus generated tokens).
    pub max_target_len: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl ModelConfig {
    pub fn desk(vocab_size: usize) -> Self {
        ModelConfig {
            n_enc_layers: 2,
            n_dec_layers: 2,
            d_model: 64,
            n_heads: 4,
            d_ffn: 256,
            vocab_size,
            max_positions: 512,
            max_target_len: 128,
            dropout: 0.0,
            seed: 0,
        }
    }

    pub fn paper(vocab_size: usize) -> Self {
        ModelConfig {
            n_enc_layers: 12,
            n_dec_layers: 12,
            d_model: 1024,
            n_heads: 16,
            d_ffn: 4096,
            vocab_size,
            max_positions: 1024,
            max_target_len: 128,
            dropout: 0.1,
            seed: 0,
        }
    }

    /// One layer each side, d_model 16: sized for finite-difference checks.
    pub fn tiny(vocab_size: usize) -> Self {
        ModelConfig {
            n_enc_layers: 1,
            n_dec_layers: 1,
            d_model: 16,
            n_heads: 2,
            d_ffn: 32,
            vocab_size,
            max_positions: 32,
            max_target_len: 16,
            dropout: 0.0,
            seed: 0,
        }
    }

    pub fn for_profile(profile: Profile, vocab_size: usize) -> Self {
        match profile {
            Profile::Desk => ModelConfig::desk(vocab_size),
            Profile::Paper => ModelConfig::paper(vocab_size),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("n_enc_layers", self.n_enc_layers),
            ("n_dec_layers", self.n_dec_layers),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_ffn", self.d_ffn),
            ("vocab_size", self.vocab_size),
            ("max_positions", self.max_positions),
            ("max_target_len", self.max_target_len),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::InvalidConfig(format!("{name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(ModelError::InvalidConfig(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::InvalidConfig(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Closed-form parameter count (token embedding tied with the output
    /// projection).
    pub fn parameter_count(&self) -> usize {
        let d = self.d_model;
        let attention = 4 * (d * d + d);
        let ffn = d * self.d_ffn + self.d_ffn + self.d_ffn * d + d;
        let norm = 2 * d;
        let encoder_layer = attention + ffn + 2 * norm;
        let decoder_layer = 2 * attention + ffn + 3 * norm;
        self.vocab_size * d
            + self.max_positions * d
            + self.max_target_len * d
            + self.n_enc_layers * encoder_layer
            + self.n_dec_layers * decoder_layer
            + 2 * norm
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub batch_size: usize,
    pub max_input_len: usize,
    /// Maximum target length in tokens, EOS included.
    pub output_len: usize,
}

impl Hyperparams {
    pub fn paper() -> Self {
        Hyperparams {
            lr: 5e-4,
            warmup_steps: 1000,
            total_steps: 20000,
            batch_size: 8,
            max_input_len: 512,
            output_len: 128,
        }
    }

    /// Same learning rate and batch size, a tenth of the schedule.
    pub fn desk() -> Self {
        Hyperparams {
            warmup_steps: 100,
            total_steps: 2000,
            ..Hyperparams::paper()
        }
    }

    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Desk => Hyperparams::desk(),
            Profile::Paper => Hyperparams::paper(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr < 0.0 || !self.lr.is_finite() {
            return Err(ModelError::InvalidHyperparams(format!("lr {}", self.lr)));
        }
        if self.total_steps == 0 || self.batch_size == 0 || self.max_input_len == 0 || self.output_len < 1 {
            return Err(ModelError::InvalidHyperparams(
                "steps, batch size and lengths must be positive".into(),
            ));
        }
        if self.warmup_steps > self.total_steps {
            return Err(ModelError::InvalidHyperparams(format!(
                "warmup {} exceeds total steps {}",
                self.warmup_steps, self.total_steps
            )));
        }
        Ok(())
    }

    /// Linear warmup to `lr`, then linear decay reaching zero at
    /// `total_steps`.
    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            self.lr * (step + 1) as f64 / self.warmup_steps as f64
        } else {
            let remaining = self.total_steps.saturating_sub(step) as f64;
            self.lr * remaining / (self.total_steps - self.warmup_steps).max(1) as f64
        }
    }
}
