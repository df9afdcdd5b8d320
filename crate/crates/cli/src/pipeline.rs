//! The commands behind each subcommand. Everything here is usable in-process;
//! `main.rs` only parses flags and maps errors to exit codes.
//!
//! Output layout under `out_dir`:
//!
//! ```text
//! vocab.json
//! splits.json
//! packed/<setting>/{train,dev,test}.jsonl        packed records
//! packed/<setting>/{train,dev,test}.refs.jsonl   reference responses
//! runs/<setting>/checkpoint/                     config.json + weights.safetensors
//! runs/<setting>/loss.csv
//! runs/<setting>/predictions.<split>.jsonl
//! runs/<setting>/report.<split>.json
//! runs/<setting>/manifest.json
//! compare.<split>.{txt,json}
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use fidconv_core::channels::Role;
use fidconv_core::corpus::{dialogue_examples, read_jsonl, write_jsonl};
use fidconv_core::{
    build_vocab, evaluate, load_corpus, pack_example, synth_corpus, AssembleOptions, Corpus, EvalPair, Example,
    MetricReport, PackedRecord, Setting, Vocab,
};
use fidconv_model::gradcheck::{DEFAULT_EPS, DEFAULT_FLOOR};
use fidconv_model::{
    generate, grad_check, load_checkpoint, random_record, save_checkpoint, train, DType, Device, FidModel,
    GradCheckReport, ModelConfig, Profile,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::manifest::{sha256_bytes, sha256_file, CorpusChecksums, RunManifest};

pub const SPLITS: [&str; 3] = ["train", "dev", "test"];

pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn vocab(&self) -> PathBuf {
        self.root.join("vocab.json")
    }

    pub fn splits(&self) -> PathBuf {
        self.root.join("splits.json")
    }

    pub fn packed_dir(&self, setting: Setting) -> PathBuf {
        self.root.join("packed").join(setting.name())
    }

    pub fn packed(&self, setting: Setting, split: &str) -> PathBuf {
        self.packed_dir(setting).join(format!("{split}.jsonl"))
    }

    pub fn refs(&self, setting: Setting, split: &str) -> PathBuf {
        self.packed_dir(setting).join(format!("{split}.refs.jsonl"))
    }

    pub fn run_dir(&self, setting: Setting) -> PathBuf {
        self.root.join("runs").join(setting.name())
    }

    pub fn checkpoint(&self, setting: Setting) -> PathBuf {
        self.run_dir(setting).join("checkpoint")
    }

    pub fn loss_log(&self, setting: Setting) -> PathBuf {
        self.run_dir(setting).join("loss.csv")
    }

    pub fn predictions(&self, setting: Setting, split: &str) -> PathBuf {
        self.run_dir(setting).join(format!("predictions.{split}.jsonl"))
    }

    pub fn report(&self, setting: Setting, split: &str) -> PathBuf {
        self.run_dir(setting).join(format!("report.{split}.json"))
    }

    pub fn manifest(&self, setting: Setting) -> PathBuf {
        self.run_dir(setting).join("manifest.json")
    }

    pub fn compare(&self, split: &str, ext: &str) -> PathBuf {
        self.root.join(format!("compare.{split}.{ext}"))
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn check_split(split: &str) -> Result<()> {
    if SPLITS.contains(&split) {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "unknown split {split:?}; expected train, dev or test"
        )))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
}

impl Splits {
    pub fn get(&self, split: &str) -> Result<&[String]> {
        match split {
            "train" => Ok(&self.train),
            "dev" => Ok(&self.dev),
            "test" => Ok(&self.test),
            other => Err(CliError::Usage(format!("unknown split {other:?}"))),
        }
    }
}

/// Seeded 80/10/10 split by dialogue. Each split lists its dialogues in
/// corpus order.
pub fn split_dialogues(corpus: &Corpus, seed: u64) -> Splits {
    let n = corpus.dialogues().len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_dev = (n + 5) / 10;
    let n_test = (n + 5) / 10;
    let n_train = n.saturating_sub(n_dev + n_test);
    let take = |range: std::ops::Range<usize>| -> Vec<String> {
        let mut picked: Vec<usize> = order[range].to_vec();
        picked.sort_unstable();
        picked
            .into_iter()
            .map(|i| corpus.dialogues()[i].dialogue_id.clone())
            .collect()
    };
    Splits {
        train: take(0..n_train),
        dev: take(n_train..n_train + n_dev),
        test: take(n_train + n_dev..n),
    }
}

/// Examples of the listed dialogues, in list order.
pub fn split_examples(corpus: &Corpus, ids: &[String]) -> Vec<Example> {
    let wanted: HashSet<&str> = ids.iter().map(String::as_str).collect();
    let by_id: BTreeMap<&str, _> = corpus
        .dialogues()
        .iter()
        .filter(|d| wanted.contains(d.dialogue_id.as_str()))
        .map(|d| (d.dialogue_id.as_str(), d))
        .collect();
    ids.iter()
        .filter_map(|id| by_id.get(id.as_str()))
        .flat_map(|d| dialogue_examples(d))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reference {
    pub dialogue_id: String,
    pub turn: usize,
    pub reference: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub dialogue_id: String,
    pub turn: usize,
    pub prediction: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackStats {
    pub n_examples: usize,
    /// Channel count -> number of examples.
    pub channel_counts: BTreeMap<usize, usize>,
    /// Role name -> (parts truncated, parts total).
    pub truncated_parts: BTreeMap<String, (usize, usize)>,
}

impl PackStats {
    fn add(&mut self, record: &PackedRecord) {
        self.n_examples += 1;
        *self.channel_counts.entry(record.channels.len()).or_default() += 1;
        for part in record.channels.iter().flat_map(|c| &c.parts) {
            let role = match part.role {
                Role::Wp => "WP",
                Role::Sp => "SP",
                Role::Ah => "AH",
                Role::Ne => "NE",
            };
            let entry = self.truncated_parts.entry(role.to_string()).or_default();
            entry.0 += usize::from(part.truncated);
            entry.1 += 1;
        }
    }

    pub fn truncated_fraction(&self, role: &str) -> Option<f64> {
        self.truncated_parts
            .get(role)
            .filter(|(_, total)| *total > 0)
            .map(|&(t, total)| t as f64 / total as f64)
    }
}

impl fmt::Display for PackStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} examples; channels:", self.n_examples)?;
        for (count, n) in &self.channel_counts {
            write!(f, " {count}x{n}")?;
        }
        for (role, (t, total)) in &self.truncated_parts {
            write!(
                f,
                "; {role} truncated {t}/{total} ({:.1}%)",
                100.0 * *t as f64 / (*total).max(1) as f64
            )?;
        }
        Ok(())
    }
}

pub fn pack_examples(
    examples: &[Example],
    corpus: &Corpus,
    setting: Setting,
    opts: &AssembleOptions,
    vocab: &Vocab,
) -> Result<(Vec<PackedRecord>, Vec<Reference>, PackStats)> {
    let mut records = Vec::with_capacity(examples.len());
    let mut refs = Vec::with_capacity(examples.len());
    let mut stats = PackStats::default();
    for e in examples {
        let passage = corpus
            .document(&e.doc_id)
            .map(|d| d.body.as_str())
            .ok_or_else(|| CliError::Data(format!("missing document {}", e.doc_id)))?;
        let record = pack_example(setting, e, passage, opts, vocab)
            .map_err(|err| CliError::Data(format!("dialogue {} turn {}: {err}", e.dialogue_id, e.turn)))?;
        stats.add(&record);
        records.push(record);
        refs.push(Reference {
            dialogue_id: e.dialogue_id.clone(),
            turn: e.turn,
            reference: e.target.clone(),
        });
    }
    Ok((records, refs, stats))
}

pub struct Prepared {
    pub corpus: Corpus,
    pub vocab: Vocab,
    pub splits: Splits,
}

/// Corpus, vocabulary (over the whole corpus) and dialogue split.
pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let corpus = load_corpus(&cfg.corpus.dialogues, &cfg.corpus.documents)?;
    prepare_corpus(cfg, corpus)
}

pub fn prepare_corpus(cfg: &RunConfig, corpus: Corpus) -> Result<Prepared> {
    let vocab = build_vocab(&corpus, cfg.tokenizer.mode, cfg.tokenizer.min_count)?;
    let splits = split_dialogues(&corpus, cfg.seed);
    Ok(Prepared { corpus, vocab, splits })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthSummary {
    pub dialogues: usize,
    pub examples: usize,
    pub plan: PathBuf,
}

/// Writes the synthetic corpus to the configured corpus paths and the plant
/// plan to `plan.jsonl` beside the dialogues file.
pub fn cmd_synth(cfg: &RunConfig) -> Result<SynthSummary> {
    let synth = synth_corpus(cfg.seed, &cfg.synth)?;
    for path in [&cfg.corpus.dialogues, &cfg.corpus.documents] {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            create_dir(parent)?;
        }
    }
    synth.corpus.save(&cfg.corpus.dialogues, &cfg.corpus.documents)?;
    let plan = cfg
        .corpus
        .dialogues
        .parent()
        .map(|p| p.join("plan.jsonl"))
        .unwrap_or_else(|| PathBuf::from("plan.jsonl"));
    write_jsonl(&plan, synth.plan.iter())?;
    let examples = synth
        .corpus
        .dialogues()
        .iter()
        .map(|d| d.turns.len().saturating_sub(1))
        .sum();
    Ok(SynthSummary {
        dialogues: synth.corpus.dialogues().len(),
        examples,
        plan,
    })
}

fn timed<T>(manifest_path: &Path, stage: &str, f: impl FnOnce(&mut RunManifest) -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let mut manifest = RunManifest::load_or_default(manifest_path)?;
    let out = f(&mut manifest)?;
    manifest
        .wall_clock
        .insert(stage.to_string(), start.elapsed().as_secs_f64());
    manifest.save(manifest_path)?;
    Ok(out)
}

/// Packs every split for the configured setting. Returns per-split stats.
pub fn cmd_pack(cfg: &RunConfig) -> Result<BTreeMap<String, PackStats>> {
    let layout = Layout::new(&cfg.out_dir);
    let setting = cfg.channels.setting;
    create_dir(&layout.packed_dir(setting))?;
    create_dir(&layout.run_dir(setting))?;
    timed(&layout.manifest(setting), "pack", |manifest| {
        let prep = prepare(cfg)?;
        prep.vocab.save(&layout.vocab())?;
        let splits_json = serde_json::to_string_pretty(&prep.splits).expect("splits serialize");
        std::fs::write(layout.splits(), splits_json).map_err(|e| CliError::io(&layout.splits(), e))?;
        let opts = cfg.assemble_options();
        let mut all = BTreeMap::new();
        manifest.packed_sha256.clear();
        for split in SPLITS {
            let examples = split_examples(&prep.corpus, prep.splits.get(split)?);
            let (records, refs, stats) = pack_examples(&examples, &prep.corpus, setting, &opts, &prep.vocab)?;
            let packed = layout.packed(setting, split);
            write_jsonl(&packed, records.iter())?;
            write_jsonl(&layout.refs(setting, split), refs.iter())?;
            manifest.packed_sha256.insert(split.to_string(), sha256_file(&packed)?);
            all.insert(split.to_string(), stats);
        }
        manifest.config = Some(cfg.resolve(prep.vocab.len())?);
        manifest.corpus = Some(CorpusChecksums {
            dialogues: sha256_file(&cfg.corpus.dialogues)?,
            documents: sha256_file(&cfg.corpus.documents)?,
        });
        manifest.vocab_sha256 = Some(sha256_file(&layout.vocab())?);
        Ok(all)
    })
}

fn load_records(path: &Path, setting: Setting) -> Result<Vec<PackedRecord>> {
    let records: Vec<PackedRecord> = read_jsonl(path)?;
    if let Some(bad) = records.iter().find(|r| r.setting != setting) {
        return Err(CliError::Data(format!(
            "{} holds {} records, expected {}",
            path.display(),
            bad.setting,
            setting
        )));
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub steps: usize,
    pub first_loss: f64,
    pub final_loss: f64,
}

/// Builds a model from the resolved config, trains it on the packed train
/// split and writes the checkpoint and loss log. The paper profile only
/// trains with `force`.
pub fn cmd_train(cfg: &RunConfig, force: bool) -> Result<TrainSummary> {
    if cfg.profile == Profile::Paper && !force {
        return Err(CliError::Usage(
            "the paper profile is recorded for reference and is not trained without --force".into(),
        ));
    }
    let layout = Layout::new(&cfg.out_dir);
    let setting = cfg.channels.setting;
    create_dir(&layout.run_dir(setting))?;
    timed(&layout.manifest(setting), "train", |manifest| {
        let vocab = Vocab::load(&layout.vocab())?;
        let resolved = cfg.resolve(vocab.len())?;
        let records = load_records(&layout.packed(setting, "train"), setting)?;
        let model = FidModel::new(&resolved.model, DType::F32, &Device::Cpu)?;
        let log_every = cfg.train.log_every.unwrap_or(100);
        let log = train(&model, &records, &resolved.hyperparams, cfg.seed, |e| {
            if log_every > 0 && (e.step + 1) % log_every == 0 {
                eprintln!("step {:>6}  lr {:.3e}  loss {:.4}", e.step + 1, e.lr, e.loss);
            }
        })?;
        let checkpoint = layout.checkpoint(setting);
        save_checkpoint(&model, &checkpoint)?;
        fidconv_model::train::write_log(&layout.loss_log(setting), &log)?;
        manifest.config = Some(resolved);
        manifest.checkpoint_sha256 = Some(sha256_file(&checkpoint.join("weights.safetensors"))?);
        Ok(TrainSummary {
            steps: log.len(),
            first_loss: log.first().map_or(f64::NAN, |e| e.loss),
            final_loss: log.last().map_or(f64::NAN, |e| e.loss),
        })
    })
}

/// Decodes every example of `split` and writes one prediction per line.
pub fn cmd_generate(cfg: &RunConfig, split: &str) -> Result<PathBuf> {
    check_split(split)?;
    let layout = Layout::new(&cfg.out_dir);
    let setting = cfg.channels.setting;
    timed(&layout.manifest(setting), &format!("generate.{split}"), |_| {
        let vocab = Vocab::load(&layout.vocab())?;
        let resolved = cfg.resolve(vocab.len())?;
        let model = load_checkpoint(&layout.checkpoint(setting), DType::F32, &Device::Cpu)?;
        let records = load_records(&layout.packed(setting, split), setting)?;
        let refs: Vec<Reference> = read_jsonl(&layout.refs(setting, split))?;
        if refs.len() != records.len() {
            return Err(CliError::Data(format!(
                "{} records but {} references for split {split}",
                records.len(),
                refs.len()
            )));
        }
        let outputs = generate(
            &model,
            &records,
            cfg.generate.strategy,
            resolved.generate_max_len,
            cfg.generate.batch_size,
        )?;
        let predictions = refs.iter().zip(&outputs).map(|(r, ids)| Prediction {
            dialogue_id: r.dialogue_id.clone(),
            turn: r.turn,
            prediction: vocab.decode_generated(ids),
        });
        let path = layout.predictions(setting, split);
        write_jsonl(&path, predictions)?;
        Ok(path)
    })
}

/// Pairs predictions with references line by line; ids must agree.
pub fn eval_pairs(predictions: &[Prediction], references: &[Reference]) -> Result<Vec<EvalPair>> {
    if predictions.len() != references.len() {
        return Err(CliError::Data(format!(
            "{} predictions for {} references",
            predictions.len(),
            references.len()
        )));
    }
    predictions
        .iter()
        .zip(references)
        .enumerate()
        .map(|(i, (p, r))| {
            if (p.dialogue_id.as_str(), p.turn) != (r.dialogue_id.as_str(), r.turn) {
                Err(CliError::Data(format!(
                    "line {}: prediction for {}/{} but reference for {}/{}",
                    i + 1,
                    p.dialogue_id,
                    p.turn,
                    r.dialogue_id,
                    r.turn
                )))
            } else {
                Ok(EvalPair::new(p.prediction.clone(), r.reference.clone()))
            }
        })
        .collect()
}

/// Scores predictions against references and records the report (and its
/// checksum) in the manifest. Paths default to the run layout.
pub fn cmd_eval(
    cfg: &RunConfig,
    split: &str,
    predictions: Option<&Path>,
    references: Option<&Path>,
) -> Result<MetricReport> {
    check_split(split)?;
    let layout = Layout::new(&cfg.out_dir);
    let setting = cfg.channels.setting;
    create_dir(&layout.run_dir(setting))?;
    timed(&layout.manifest(setting), &format!("eval.{split}"), |manifest| {
        let pred_path = predictions.map_or_else(|| layout.predictions(setting, split), Path::to_path_buf);
        let ref_path = references.map_or_else(|| layout.refs(setting, split), Path::to_path_buf);
        let preds: Vec<Prediction> = read_jsonl(&pred_path)?;
        let refs: Vec<Reference> = read_jsonl(&ref_path)?;
        let report = evaluate(&eval_pairs(&preds, &refs)?)?;
        let report_path = layout.report(setting, split);
        report.save(&report_path)?;
        manifest.split = Some(split.to_string());
        manifest.report = Some(report.clone());
        manifest.report_sha256 = Some(sha256_file(&report_path)?);
        Ok(report)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub split: String,
    pub baseline: Setting,
    pub rows: Vec<(Setting, MetricReport)>,
    /// Setting minus baseline, metric by metric, in report order.
    pub deltas: Vec<(Setting, [f64; 6])>,
}

impl Comparison {
    pub fn table(&self) -> String {
        let width = 18;
        let mut out = format!("{:<width$}{}\n", "setting", MetricReport::HEADER);
        for (setting, report) in &self.rows {
            out.push_str(&format!("{:<width$}{}\n", setting.name(), report.display_line()));
        }
        for (setting, delta) in &self.deltas {
            let cells: Vec<String> = delta.iter().map(|d| format!("{:>+6.2}", d * 100.0)).collect();
            let label = format!("delta {}", setting.name());
            out.push_str(&format!("{label:<width$}{}\n", cells.join("  ")));
        }
        out
    }
}

/// Side-by-side reports for `settings`, with deltas against `baseline`.
/// Reports are read, never recomputed, and must match the checksum their
/// manifest recorded.
pub fn cmd_compare(cfg: &RunConfig, settings: &[Setting], baseline: Setting, split: &str) -> Result<Comparison> {
    check_split(split)?;
    let layout = Layout::new(&cfg.out_dir);
    let mut order = vec![baseline];
    order.extend(settings.iter().copied().filter(|&s| s != baseline));
    let missing: Vec<String> = order
        .iter()
        .filter(|&&s| !layout.report(s, split).exists() || !layout.manifest(s).exists())
        .map(|&s| format!("{} ({})", s.name(), layout.report(s, split).display()))
        .collect();
    if !missing.is_empty() {
        return Err(CliError::Data(format!("missing runs: {}", missing.join(", "))));
    }
    let mut rows = Vec::with_capacity(order.len());
    for &setting in &order {
        let path = layout.report(setting, split);
        let bytes = std::fs::read(&path).map_err(|e| CliError::io(&path, e))?;
        let manifest = RunManifest::load(&layout.manifest(setting))?;
        if manifest.report_sha256.as_deref() != Some(sha256_bytes(&bytes).as_str()) {
            return Err(CliError::Data(format!(
                "{} does not match the checksum recorded in its manifest",
                path.display()
            )));
        }
        let report = MetricReport::load(&path)?;
        rows.push((setting, report));
    }
    let n = rows[0].1.n_pairs;
    if let Some((s, r)) = rows.iter().find(|(_, r)| r.n_pairs != n) {
        return Err(CliError::Data(format!(
            "{} scored {} pairs but {} scored {n}",
            s.name(),
            r.n_pairs,
            baseline.name()
        )));
    }
    let base = rows[0].1.values();
    let deltas = rows[1..]
        .iter()
        .map(|(s, r)| {
            let v = r.values();
            (*s, std::array::from_fn(|i| v[i] - base[i]))
        })
        .collect();
    let cmp = Comparison {
        split: split.to_string(),
        baseline,
        rows,
        deltas,
    };
    create_dir(layout.root())?;
    let txt = layout.compare(split, "txt");
    std::fs::write(&txt, cmp.table()).map_err(|e| CliError::io(&txt, e))?;
    let json = layout.compare(split, "json");
    let text = serde_json::to_string_pretty(&cmp).expect("comparison serializes");
    std::fs::write(&json, text).map_err(|e| CliError::io(&json, e))?;
    Ok(cmp)
}

/// Channel counts exercised by the gradient check.
pub const GRADCHECK_CHANNELS: [usize; 3] = [1, 2, 11];
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Finite-difference check on a one-layer, d_model-16 model in double
/// precision, once per channel count in [`GRADCHECK_CHANNELS`].
pub fn cmd_gradcheck(seed: u64) -> Result<Vec<(usize, GradCheckReport)>> {
    let vocab_size = 16;
    let config = ModelConfig {
        max_positions: 8,
        max_target_len: 8,
        seed,
        ..ModelConfig::tiny(vocab_size)
    };
    let model = FidModel::new(&config, DType::F64, &Device::Cpu)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(GRADCHECK_CHANNELS.len());
    for n in GRADCHECK_CHANNELS {
        let record = random_record(&mut rng, n, vocab_size, 5, 3);
        let report = grad_check(&model, &[&record], 8, DEFAULT_EPS, DEFAULT_FLOOR)?;
        out.push((n, report));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use fidconv_core::SynthParams;

    fn small_synth() -> SynthParams {
        SynthParams {
            n_dialogues: 20,
            turns_per_dialogue: 3,
            turn_len: 4,
            history_turn_len: 6,
            passage_sentences: 5,
            sentence_len: 4,
            filler_vocab: 10,
            n_fact_tokens: 3,
            passage_fact_sentence: 3,
            history_fact_turn: 0,
            fact_repeat: 1,
        }
    }

    #[test]
    fn split_is_seeded_disjoint_and_complete() {
        let corpus = synth_corpus(0, &small_synth()).unwrap().corpus;
        let a = split_dialogues(&corpus, 1);
        assert_eq!(a, split_dialogues(&corpus, 1));
        assert_ne!(a, split_dialogues(&corpus, 2));
        assert_eq!((a.train.len(), a.dev.len(), a.test.len()), (16, 2, 2));
        let mut all: Vec<&String> = a.train.iter().chain(&a.dev).chain(&a.test).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 20);
    }

    #[test]
    fn eval_pairs_checks_alignment() {
        let p = |id: &str, t| Prediction {
            dialogue_id: id.into(),
            turn: t,
            prediction: "a".into(),
        };
        let r = |id: &str, t| Reference {
            dialogue_id: id.into(),
            turn: t,
            reference: "a".into(),
        };
        assert_eq!(eval_pairs(&[p("x", 0)], &[r("x", 0)]).unwrap().len(), 1);
        assert!(eval_pairs(&[p("x", 0)], &[r("x", 1)]).is_err());
        assert!(eval_pairs(&[p("x", 0)], &[]).is_err());
    }

    #[test]
    fn pack_stats_count_channels_and_truncation() {
        let cfg = RunConfig::default();
        let corpus = synth_corpus(0, &small_synth()).unwrap().corpus;
        let prep = prepare_corpus(&cfg, corpus).unwrap();
        let examples = split_examples(&prep.corpus, &prep.splits.train);
        let opts = AssembleOptions {
            budgets: fidconv_core::Budgets {
                single_part: 12,
                ..fidconv_core::Budgets::default()
            },
            ..cfg.assemble_options()
        };
        let (records, refs, stats) =
            pack_examples(&examples, &prep.corpus, Setting::SingleWp, &opts, &prep.vocab).unwrap();
        assert_eq!(records.len(), 32);
        assert_eq!(refs.len(), 32);
        assert_eq!(stats.channel_counts, BTreeMap::from([(1, 32)]));
        assert_eq!(stats.truncated_fraction("WP"), Some(1.0));
        assert!(stats.to_string().starts_with("32 examples; channels: 1x32"));
    }

    #[test]
    fn paper_profile_needs_force() {
        let cfg = RunConfig {
            profile: Profile::Paper,
            ..RunConfig::default()
        };
        assert_eq!(cmd_train(&cfg, false).unwrap_err().exit_code(), 1);
    }
}
