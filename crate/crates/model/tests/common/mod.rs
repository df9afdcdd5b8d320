#![allow(dead_code)]

use fidconv_core::{
    build_vocab, make_examples, pack_example, synth_corpus, AssembleOptions, Budgets, Mode, PackedRecord, Setting,
    SynthParams, Vocab,
};

pub struct Data {
    pub vocab: Vocab,
    pub records: Vec<PackedRecord>,
}

/// Packs a small synthetic corpus under `setting` with every channel budget
/// set to `budget`.
pub fn synth_records(seed: u64, params: &SynthParams, setting: Setting, budget: usize, sp_k: usize) -> Data {
    let synth = synth_corpus(seed, params).unwrap();
    let vocab = build_vocab(&synth.corpus, Mode::Word, 1).unwrap();
    let opts = AssembleOptions {
        budgets: Budgets {
            single_part: budget / 2,
            single_ne: budget,
            fid_channel: budget,
        },
        sp_k,
        ..AssembleOptions::default()
    };
    let records = make_examples(&synth.corpus)
        .iter()
        .map(|e| {
            let passage = &synth.corpus.document(&e.doc_id).unwrap().body;
            pack_example(setting, e, passage, &opts, &vocab).unwrap()
        })
        .collect();
    Data { vocab, records }
}

pub fn tiny_params(n_dialogues: usize) -> SynthParams {
    SynthParams {
        n_dialogues,
        turns_per_dialogue: 3,
        turn_len: 4,
        history_turn_len: 4,
        passage_sentences: 4,
        sentence_len: 3,
        filler_vocab: 6,
        n_fact_tokens: 3,
        passage_fact_sentence: 2,
        history_fact_turn: 0,
        fact_repeat: 1,
    }
}
