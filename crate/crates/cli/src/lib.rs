//! Command-line front end: configuration, the run layout on disk, and one
//! function per subcommand.

pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use fidconv_core::Setting;
use fidconv_model::Profile;

use config::{Overrides, RunConfig};
use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "fidconv", version, about = "Fusion-in-decoder dialogue generation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub setting: Option<Setting>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// desk or paper.
    #[arg(long, global = true)]
    pub profile: Option<Profile>,
    /// Output directory (for synth: the corpus directory).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus with planted facts.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Build the vocabulary and split, then pack every split.
    Pack {
        #[command(flatten)]
        common: Common,
    },
    /// Train on the packed train split.
    Train {
        #[command(flatten)]
        common: Common,
        /// Allow training the paper profile.
        #[arg(long)]
        force: bool,
    },
    /// Decode a split with the trained checkpoint.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Score predictions against references.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        references: Option<PathBuf>,
    },
    /// Tabulate saved reports side by side.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "test")]
        split: String,
        /// Settings to compare (default: every setting).
        #[arg(long = "settings", value_delimiter = ',')]
        settings: Vec<Setting>,
        #[arg(long, default_value = "Single-channel-WP")]
        baseline: Setting,
    },
    /// Finite-difference gradient check in double precision.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> Result<RunConfig> {
    let overrides = Overrides {
        setting: common.setting,
        seed: common.seed,
        profile: common.profile,
        out: common.out.clone(),
    };
    RunConfig::resolve_sources(common.config.as_deref(), &overrides)
}

/// Runs one subcommand, printing its summary to stdout.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { common } => {
            let mut cfg = load(&common)?;
            if let Some(dir) = &common.out {
                cfg.corpus.dialogues = dir.join("dialogues.jsonl");
                cfg.corpus.documents = dir.join("documents.jsonl");
            }
            let s = pipeline::cmd_synth(&cfg)?;
            println!(
                "wrote {} dialogues ({} examples) to {} and {}; plan in {}",
                s.dialogues,
                s.examples,
                cfg.corpus.dialogues.display(),
                cfg.corpus.documents.display(),
                s.plan.display()
            );
        }
        Command::Pack { common } => {
            let cfg = load(&common)?;
            for (split, stats) in pipeline::cmd_pack(&cfg)? {
                println!("{split}: {stats}");
            }
        }
        Command::Train { common, force } => {
            let cfg = load(&common)?;
            let s = pipeline::cmd_train(&cfg, force)?;
            println!(
                "trained {} steps; loss {:.4} -> {:.4}",
                s.steps, s.first_loss, s.final_loss
            );
        }
        Command::Generate { common, split } => {
            let cfg = load(&common)?;
            let path = pipeline::cmd_generate(&cfg, &split)?;
            println!("wrote {}", path.display());
        }
        Command::Eval {
            common,
            split,
            predictions,
            references,
        } => {
            let cfg = load(&common)?;
            let report = pipeline::cmd_eval(&cfg, &split, predictions.as_deref(), references.as_deref())?;
            println!("{}\n{}", fidconv_core::MetricReport::HEADER, report.display_line());
        }
        Command::Compare {
            common,
            split,
            settings,
            baseline,
        } => {
            let cfg = load(&common)?;
            let settings = if settings.is_empty() {
                Setting::ALL.to_vec()
            } else {
                settings
            };
            let cmp = pipeline::cmd_compare(&cfg, &settings, baseline, &split)?;
            print!("{}", cmp.table());
        }
        Command::Gradcheck { common } => {
            let cfg = load(&common)?;
            let mut worst = 0.0f64;
            for (n, r) in pipeline::cmd_gradcheck(cfg.seed)? {
                println!(
                    "{n:>2} channels: {} elements, max relative error {:.3e} at {}[{}]",
                    r.n_elements, r.max_rel_error, r.worst.0, r.worst.1
                );
                worst = worst.max(r.max_rel_error);
            }
            if worst.is_nan() || worst >= pipeline::GRADCHECK_TOLERANCE {
                return Err(CliError::Numerical(format!(
                    "max relative error {worst:.3e} is not below {:e}",
                    pipeline::GRADCHECK_TOLERANCE
                )));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_parse() {
        let cli = Cli::try_parse_from([
            "fidconv",
            "compare",
            "--settings",
            "FiD-SP,FiD-WP-AH",
            "--split",
            "dev",
            "--seed",
            "3",
        ])
        .unwrap();
        match cli.command {
            Command::Compare {
                common,
                settings,
                split,
                ..
            } => {
                assert_eq!(settings, vec![Setting::FidSp, Setting::FidWpAh]);
                assert_eq!(split, "dev");
                assert_eq!(common.seed, Some(3));
            }
            other => panic!("parsed {other:?}"),
        }
        assert!(Cli::try_parse_from(["fidconv", "train", "--setting", "FiD-XX"]).is_err());
    }
}
