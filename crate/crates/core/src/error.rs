use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("dangling document reference: dialogue {dialogue_id} refers to missing doc_id {doc_id:?}")]
    DanglingDocument { dialogue_id: String, doc_id: String },

    #[error("duplicate {kind} id {id:?}")]
    DuplicateId { kind: &'static str, id: String },

    #[error("invalid dialogue {dialogue_id}: {reason}")]
    InvalidDialogue { dialogue_id: String, reason: String },

    #[error("invalid document {doc_id}: {reason}")]
    InvalidDocument { doc_id: String, reason: String },

    #[error("invalid synthetic corpus parameters: {0}")]
    InvalidSynthParams(String),

    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,

    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),

    #[error("cannot build a BM25 index over zero sentences")]
    EmptySentences,

    #[error("invalid BM25 parameters: k1={k1}, b={b}")]
    InvalidBm25Params { k1: f64, b: f64 },

    #[error("query exceeds channel budget: {needed} protected tokens, budget {budget}")]
    QueryExceedsBudget { needed: usize, budget: usize },

    #[error("unknown channel setting {0:?}")]
    UnknownSetting(String),

    #[error("example {dialogue_id}/{turn} has an empty history")]
    EmptyHistory { dialogue_id: String, turn: usize },

    #[error("metric {metric}: {reason}")]
    Metric { metric: &'static str, reason: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
