//! Run configuration: a TOML file, overridden by command-line flags.
//!
//! Every section and key is optional; missing values take the defaults
//! below, and model/training values left unset come from the profile.
//!
//! ```toml
//! seed = 0
//! out_dir = "runs/mech"
//! profile = "desk"
//!
//! [corpus]
//! dialogues = "data/dialogues.jsonl"
//! documents = "data/documents.jsonl"
//!
//! [channels]
//! setting = "FiD-WP-AH"
//!
//! [train]
//! total_steps = 500
//! ```

use std::path::{Path, PathBuf};

use fidconv_core::bm25::Bm25Params;
use fidconv_core::{AssembleOptions, Budgets, Mode, Setting, SpOrder, SynthParams};
use fidconv_model::{Hyperparams, ModelConfig, Profile, Strategy};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusPaths {
    pub dialogues: PathBuf,
    pub documents: PathBuf,
}

impl Default for CorpusPaths {
    fn default() -> Self {
        CorpusPaths {
            dialogues: PathBuf::from("data/dialogues.jsonl"),
            documents: PathBuf::from("data/documents.jsonl"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerConfig {
    pub mode: Mode,
    pub min_count: usize,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            mode: Mode::Word,
            min_count: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub setting: Setting,
    pub sp_k: usize,
    pub sp_order: SpOrder,
    pub budgets: Budgets,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        let opts = AssembleOptions::default();
        ChannelConfig {
            setting: Setting::FidWpAh,
            sp_k: opts.sp_k,
            sp_order: opts.sp_order,
            budgets: opts.budgets,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOverrides {
    pub n_enc_layers: Option<usize>,
    pub n_dec_layers: Option<usize>,
    pub d_model: Option<usize>,
    pub n_heads: Option<usize>,
    pub d_ffn: Option<usize>,
    pub max_positions: Option<usize>,
    pub max_target_len: Option<usize>,
    pub dropout: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOverrides {
    pub lr: Option<f64>,
    pub warmup_steps: Option<usize>,
    pub total_steps: Option<usize>,
    pub batch_size: Option<usize>,
    pub max_input_len: Option<usize>,
    pub output_len: Option<usize>,
    /// Print a progress line every this many steps (0 disables).
    pub log_every: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub strategy: Strategy,
    /// Defaults to the training output length.
    pub max_len: Option<usize>,
    pub batch_size: usize,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            strategy: Strategy::Greedy,
            max_len: None,
            batch_size: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub profile: Profile,
    pub corpus: CorpusPaths,
    pub tokenizer: TokenizerConfig,
    pub bm25: Bm25Params,
    pub channels: ChannelConfig,
    pub model: ModelOverrides,
    pub train: TrainOverrides,
    pub generate: GenerateConfig,
    pub synth: SynthParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            profile: Profile::Desk,
            corpus: CorpusPaths::default(),
            tokenizer: TokenizerConfig::default(),
            bm25: Bm25Params::default(),
            channels: ChannelConfig::default(),
            model: ModelOverrides::default(),
            train: TrainOverrides::default(),
            generate: GenerateConfig::default(),
            synth: SynthParams::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub setting: Option<Setting>,
    pub seed: Option<u64>,
    pub profile: Option<Profile>,
    pub out: Option<PathBuf>,
}

/// Everything a run actually used, as recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub run: RunConfig,
    pub model: ModelConfig,
    pub hyperparams: Hyperparams,
    pub generate_max_len: usize,
}

impl RunConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("{}: {e}", origin.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        RunConfig::parse(&text, path)
    }

    /// File (or defaults when `path` is None) with flags applied on top.
    pub fn resolve_sources(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = overrides.setting {
            cfg.channels.setting = s;
        }
        if let Some(seed) = overrides.seed {
            cfg.seed = seed;
        }
        if let Some(p) = overrides.profile {
            cfg.profile = p;
        }
        if let Some(out) = &overrides.out {
            cfg.out_dir = out.clone();
        }
        Ok(cfg)
    }

    pub fn assemble_options(&self) -> AssembleOptions {
        AssembleOptions {
            budgets: self.channels.budgets,
            sp_k: self.channels.sp_k,
            sp_order: self.channels.sp_order,
            bm25: self.bm25,
        }
    }

    pub fn model_config(&self, vocab_size: usize) -> Result<ModelConfig> {
        let m = &self.model;
        let base = ModelConfig::for_profile(self.profile, vocab_size);
        let cfg = ModelConfig {
            n_enc_layers: m.n_enc_layers.unwrap_or(base.n_enc_layers),
            n_dec_layers: m.n_dec_layers.unwrap_or(base.n_dec_layers),
            d_model: m.d_model.unwrap_or(base.d_model),
            n_heads: m.n_heads.unwrap_or(base.n_heads),
            d_ffn: m.d_ffn.unwrap_or(base.d_ffn),
            vocab_size,
            max_positions: m.max_positions.unwrap_or(base.max_positions),
            max_target_len: m.max_target_len.unwrap_or(base.max_target_len),
            dropout: m.dropout.unwrap_or(base.dropout),
            seed: self.seed,
        };
        cfg.validate()?;
        let widest = self.widest_channel();
        if cfg.max_positions < widest {
            return Err(CliError::Config(format!(
                "max_positions {} is below the widest channel budget {widest}",
                cfg.max_positions
            )));
        }
        Ok(cfg)
    }

    /// Largest packed channel length the configured setting can produce.
    pub fn widest_channel(&self) -> usize {
        let b = &self.channels.budgets;
        match self.channels.setting {
            Setting::SingleWp => 2 * b.single_part,
            Setting::SingleNe => b.single_ne,
            Setting::FidSp | Setting::FidSpAh | Setting::FidWpAh => b.fid_channel,
        }
    }

    pub fn hyperparams(&self) -> Result<Hyperparams> {
        let t = &self.train;
        let base = Hyperparams::for_profile(self.profile);
        let hp = Hyperparams {
            lr: t.lr.unwrap_or(base.lr),
            warmup_steps: t.warmup_steps.unwrap_or(base.warmup_steps),
            total_steps: t.total_steps.unwrap_or(base.total_steps),
            batch_size: t.batch_size.unwrap_or(base.batch_size),
            max_input_len: t.max_input_len.unwrap_or(base.max_input_len),
            output_len: t.output_len.unwrap_or(base.output_len),
        };
        hp.validate()?;
        Ok(hp)
    }

    pub fn resolve(&self, vocab_size: usize) -> Result<ResolvedConfig> {
        let model = self.model_config(vocab_size)?;
        let hyperparams = self.hyperparams()?;
        if hyperparams.output_len > model.max_target_len {
            return Err(CliError::Config(format!(
                "output_len {} exceeds max_target_len {}",
                hyperparams.output_len, model.max_target_len
            )));
        }
        let generate_max_len = self.generate.max_len.unwrap_or(hyperparams.output_len);
        if generate_max_len > hyperparams.output_len {
            return Err(CliError::Config(format!(
                "generate.max_len {generate_max_len} exceeds output_len {}",
                hyperparams.output_len
            )));
        }
        Ok(ResolvedConfig {
            run: self.clone(),
            model,
            hyperparams,
            generate_max_len,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::parse("", Path::new("x.toml")).unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.channels.budgets.fid_channel, 512);
        assert_eq!(cfg.assemble_options().sp_k, 10);
    }

    #[test]
    fn file_values_and_flag_overrides() {
        let text = r#"
            seed = 4
            profile = "desk"
            [channels]
            setting = "FiD-SP-AH"
            sp_order = "position"
            [train]
            total_steps = 30
            warmup_steps = 3
            [generate]
            strategy = "beam:3"
        "#;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, text).unwrap();
        let cfg = RunConfig::resolve_sources(Some(&path), &Overrides::default()).unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.channels.setting, Setting::FidSpAh);
        assert_eq!(cfg.channels.sp_order, SpOrder::Position);
        assert_eq!(cfg.generate.strategy, Strategy::Beam { width: 3 });
        let hp = cfg.hyperparams().unwrap();
        assert_eq!((hp.total_steps, hp.warmup_steps, hp.lr), (30, 3, 5e-4));
        let flags = Overrides {
            setting: Some(Setting::SingleWp),
            seed: Some(9),
            out: Some(PathBuf::from("elsewhere")),
            ..Overrides::default()
        };
        let cfg = RunConfig::resolve_sources(Some(&path), &flags).unwrap();
        assert_eq!((cfg.channels.setting, cfg.seed), (Setting::SingleWp, 9));
        assert_eq!(cfg.out_dir, PathBuf::from("elsewhere"));
    }

    #[test]
    fn bad_keys_and_values_are_config_errors() {
        for text in ["sed = 3", "[channels]\nsetting = \"FiD-XX\"", "profile = \"huge\""] {
            let err = RunConfig::parse(text, Path::new("bad.toml")).unwrap_err();
            assert_eq!(err.exit_code(), 1, "{err}");
        }
    }

    #[test]
    fn resolution_checks_lengths() {
        let mut cfg = RunConfig::default();
        cfg.model.max_positions = Some(256);
        assert!(cfg.resolve(100).is_err());
        let mut cfg = RunConfig::default();
        cfg.generate.max_len = Some(500);
        assert!(cfg.resolve(100).is_err());
        let resolved = RunConfig::default().resolve(100).unwrap();
        assert_eq!(resolved.model.vocab_size, 100);
        assert_eq!(resolved.generate_max_len, 128);
    }
}
