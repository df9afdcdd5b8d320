//! Okapi BM25 over the sentences of a single topic passage.
//!
//! The "collection" is the passage's own sentence set: document frequencies
//! and the average length are computed across its sentences, and the query is
//! the current dialogue turn.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::{pieces, Mode};

const TERMINATORS: [char; 6] = ['。', '！', '？', '!', '?', '.'];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub index: usize,
    pub text: String,
}

/// Splits after each run of terminal punctuation. Text after the last
/// terminator becomes a final sentence.
pub fn split_sentences(body: &str) -> Vec<Sentence> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = body.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if !TERMINATORS.contains(&c) {
            continue;
        }
        let mut end = i + c.len_utf8();
        while let Some(&(j, next)) = chars.peek() {
            if !TERMINATORS.contains(&next) {
                break;
            }
            end = j + next.len_utf8();
            chars.next();
        }
        push_sentence(&mut out, &body[start..end]);
        start = end;
    }
    push_sentence(&mut out, &body[start..]);
    out
}

fn push_sentence(out: &mut Vec<Sentence>, raw: &str) {
    let text = raw.trim();
    if !text.is_empty() {
        out.push(Sentence {
            index: out.len(),
            text: text.to_string(),
        });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone)]
pub struct Bm25Index {
    mode: Mode,
    params: Bm25Params,
    term_freqs: Vec<HashMap<String, usize>>,
    doc_freqs: HashMap<String, usize>,
    lengths: Vec<usize>,
    avg_len: f64,
}

impl Bm25Index {
    pub fn build(sentences: &[Sentence], mode: Mode, params: Bm25Params) -> Result<Self> {
        if sentences.is_empty() {
            return Err(Error::EmptySentences);
        }
        if params.k1.is_nan() || params.k1 <= 0.0 || !(0.0..=1.0).contains(&params.b) {
            return Err(Error::InvalidBm25Params {
                k1: params.k1,
                b: params.b,
            });
        }
        let mut term_freqs = Vec::with_capacity(sentences.len());
        let mut doc_freqs: HashMap<String, usize> = HashMap::new();
        let mut lengths = Vec::with_capacity(sentences.len());
        for sentence in sentences {
            let terms = pieces(mode, &sentence.text);
            lengths.push(terms.len());
            let mut tf: HashMap<String, usize> = HashMap::new();
            for t in terms {
                *tf.entry(t).or_default() += 1;
            }
            for t in tf.keys() {
                *doc_freqs.entry(t.clone()).or_default() += 1;
            }
            term_freqs.push(tf);
        }
        let avg_len = lengths.iter().sum::<usize>() as f64 / lengths.len() as f64;
        Ok(Bm25Index {
            mode,
            params,
            term_freqs,
            doc_freqs,
            lengths,
            avg_len,
        })
    }

    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    pub fn avg_len(&self) -> f64 {
        self.avg_len
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.doc_freqs.get(term).copied().unwrap_or(0)
    }

    pub fn term_freq(&self, sentence: usize, term: &str) -> usize {
        self.term_freqs[sentence].get(term).copied().unwrap_or(0)
    }

    pub fn sentence_len(&self, sentence: usize) -> usize {
        self.lengths[sentence]
    }

    /// Non-negative (Lucene-style) inverse document frequency.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.len() as f64;
        let df = self.doc_freq(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Sums over every query token occurrence; terms absent from the passage
    /// contribute nothing.
    pub fn score(&self, query: &str, sentence: usize) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let dl = self.lengths[sentence] as f64;
        let norm = if self.avg_len > 0.0 { dl / self.avg_len } else { 1.0 };
        pieces(self.mode, query)
            .iter()
            .filter(|q| self.doc_freqs.contains_key(*q))
            .map(|q| {
                let tf = self.term_freq(sentence, q) as f64;
                self.idf(q) * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * norm))
            })
            .sum()
    }

    pub fn scores(&self, query: &str) -> Vec<f64> {
        (0..self.len()).map(|i| self.score(query, i)).collect()
    }

    /// Exactly `k` indices, best first, ties to the lower index. Short
    /// passages are filled by repeating the best sentence.
    pub fn top_k(&self, query: &str, k: usize) -> Vec<usize> {
        let scores = self.scores(query);
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| {
            scores[b]
                .partial_cmp(&scores[a])
                .unwrap_or(Ordering::Equal)
                .then(a.cmp(&b))
        });
        order.truncate(k);
        let best = order[0];
        order.resize(k, best);
        order
    }
}
