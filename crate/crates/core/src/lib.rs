//! Data side of fusion-in-decoder dialogue generation: corpora, tokenization,
//! BM25 sentence selection, channel construction and packing, and the
//! evaluation metrics.

pub mod bm25;
pub mod channels;
pub mod corpus;
pub mod error;
pub mod metrics;
pub mod synth;
pub mod tokenizer;

pub use channels::{
    assemble, pack, pack_example, AssembleOptions, Budgets, Channel, ChannelSet, PackedRecord, Role, Setting, SpOrder,
    TokenChannel,
};
pub use corpus::{load_corpus, make_examples, Corpus, Dialogue, Document, Example, Turn};
pub use error::{Error, Result};
pub use metrics::{evaluate, EvalPair, MetricReport};
pub use synth::{synth_corpus, PlantedFacts, SynthCorpus, SynthParams};
pub use tokenizer::{build_vocab, Mode, TokenId, Vocab};
