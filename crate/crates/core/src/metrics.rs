//! Generation metrics: BLEU-1/2, DIST-1/2, RougeL and unigram F1.
//!
//! All scores are in [0, 1]; [`MetricReport::display_line`] prints them
//! scaled by 100 the way result tables usually show them. Text is split with
//! [`metric_tokens`]: CJK characters count individually, runs of other
//! alphanumerics form words, and every other non-space character is its own
//! token.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalPair {
    pub prediction: String,
    pub reference: String,
}

impl EvalPair {
    pub fn new(prediction: impl Into<String>, reference: impl Into<String>) -> Self {
        EvalPair {
            prediction: prediction.into(),
            reference: reference.into(),
        }
    }
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF      // kana
        | 0x3400..=0x4DBF    // ext A
        | 0x4E00..=0x9FFF    // unified ideographs
        | 0xAC00..=0xD7AF    // hangul syllables
        | 0xF900..=0xFAFF    // compatibility ideographs
        | 0x20000..=0x2FFFF) // ext B and later
}

pub fn metric_tokens(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for c in text.chars() {
        if !is_cjk(c) && c.is_alphanumeric() {
            word.push(c);
            continue;
        }
        if !word.is_empty() {
            tokens.push(std::mem::take(&mut word));
        }
        if !c.is_whitespace() {
            tokens.push(c.to_string());
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

fn tokenized(pairs: &[EvalPair]) -> Vec<(Vec<String>, Vec<String>)> {
    pairs
        .iter()
        .map(|p| (metric_tokens(&p.prediction), metric_tokens(&p.reference)))
        .collect()
}

fn check_order(metric: &'static str, n: usize) -> Result<()> {
    if n == 1 || n == 2 {
        Ok(())
    } else {
        Err(Error::Metric {
            metric,
            reason: format!("order must be 1 or 2, got {n}"),
        })
    }
}

/// Corpus-level BLEU with brevity penalty. BLEU-2 is the geometric mean of
/// the unigram and bigram precisions; a zero bigram match count is smoothed
/// to 1 / (bigrams + 1).
pub fn bleu_n(pairs: &[EvalPair], n: usize) -> Result<f64> {
    check_order("bleu", n)?;
    let toks = tokenized(pairs);
    let pred_len: usize = toks.iter().map(|(p, _)| p.len()).sum();
    let ref_len: usize = toks.iter().map(|(_, r)| r.len()).sum();
    if pred_len == 0 {
        return Ok(0.0);
    }
    let mut log_precision = 0.0;
    for order in 1..=n {
        let (mut matched, mut total) = (0usize, 0usize);
        for (pred, reference) in &toks {
            let ref_counts = ngram_counts(reference, order);
            for (gram, count) in ngram_counts(pred, order) {
                matched += count.min(ref_counts.get(gram).copied().unwrap_or(0));
                total += count;
            }
        }
        let precision = if matched == 0 {
            if order == 1 {
                return Ok(0.0);
            }
            1.0 / (total as f64 + 1.0)
        } else {
            matched as f64 / total as f64
        };
        log_precision += precision.ln() / n as f64;
    }
    let brevity = if pred_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / pred_len as f64).exp()
    };
    Ok(brevity * log_precision.exp())
}

/// Distinct n-grams over all predictions divided by the total n-gram count.
pub fn dist_n<S: AsRef<str>>(predictions: &[S], n: usize) -> Result<f64> {
    check_order("dist", n)?;
    let mut distinct: HashMap<Vec<String>, usize> = HashMap::new();
    let mut total = 0usize;
    for p in predictions {
        let toks = metric_tokens(p.as_ref());
        if toks.len() >= n {
            for gram in toks.windows(n) {
                *distinct.entry(gram.to_vec()).or_default() += 1;
                total += 1;
            }
        }
    }
    Ok(if total == 0 {
        0.0
    } else {
        distinct.len() as f64 / total as f64
    })
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

fn f_measure(overlap: usize, pred_len: usize, ref_len: usize) -> f64 {
    if overlap == 0 || pred_len == 0 || ref_len == 0 {
        return 0.0;
    }
    let p = overlap as f64 / pred_len as f64;
    let r = overlap as f64 / ref_len as f64;
    2.0 * p * r / (p + r)
}

fn macro_average(pairs: &[EvalPair], score: impl Fn(&[String], &[String]) -> f64) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let total: f64 = tokenized(pairs).iter().map(|(p, r)| score(p, r)).sum();
    total / pairs.len() as f64
}

/// Macro-averaged LCS F-measure (beta = 1).
pub fn rouge_l(pairs: &[EvalPair]) -> f64 {
    macro_average(pairs, |p, r| f_measure(lcs_len(p, r), p.len(), r.len()))
}

pub fn unigram_overlap(pred: &[String], reference: &[String]) -> usize {
    let ref_counts = ngram_counts(reference, 1);
    ngram_counts(pred, 1)
        .into_iter()
        .map(|(g, c)| c.min(ref_counts.get(g).copied().unwrap_or(0)))
        .sum()
}

/// Macro-averaged multiset unigram F1.
pub fn f1(pairs: &[EvalPair]) -> f64 {
    macro_average(pairs, |p, r| f_measure(unigram_overlap(p, r), p.len(), r.len()))
}

pub const REPORT_NOTES: &str = "BLEU: corpus-level, brevity penalty, bigram add-one smoothing when no bigram matches; \
DIST: corpus-level distinct/total; RougeL: macro LCS F-measure (beta=1); F1: macro multiset unigram overlap. \
Tokens: CJK characters, alphanumeric words, single punctuation marks.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu1: f64,
    pub bleu2: f64,
    pub dist1: f64,
    pub dist2: f64,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
    pub f1: f64,
    pub n_pairs: usize,
    pub notes: String,
}

impl MetricReport {
    pub const HEADER: &'static str = "BLEU-1  BLEU-2  DIST-1  DIST-2  RougeL      F1";

    pub fn values(&self) -> [f64; 6] {
        [self.bleu1, self.bleu2, self.dist1, self.dist2, self.rouge_l, self.f1]
    }

    /// Scores ×100 with two decimals.
    pub fn display_line(&self) -> String {
        self.values()
            .iter()
            .map(|v| format!("{:>6.2}", v * 100.0))
            .collect::<Vec<_>>()
            .join("  ")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }
}

pub fn evaluate(pairs: &[EvalPair]) -> Result<MetricReport> {
    if pairs.is_empty() {
        return Err(Error::Metric {
            metric: "evaluate",
            reason: "no prediction/reference pairs".into(),
        });
    }
    let predictions: Vec<&str> = pairs.iter().map(|p| p.prediction.as_str()).collect();
    Ok(MetricReport {
        bleu1: bleu_n(pairs, 1)?,
        bleu2: bleu_n(pairs, 2)?,
        dist1: dist_n(&predictions, 1)?,
        dist2: dist_n(&predictions, 2)?,
        rouge_l: rouge_l(pairs),
        f1: f1(pairs),
        n_pairs: pairs.len(),
        notes: REPORT_NOTES.to_string(),
    })
}
