//! Seeded synthetic corpora with planted facts.
//!
//! Every dialogue gets its own passage of filler sentences. One passage
//! sentence carries a passage-fact token (`pf*`) and one early turn carries a
//! history-fact token (`hf*`). Neither token appears anywhere else in the
//! dialogue until the final turn, which answers the cue word `ask` in the
//! turn before it with `<passage fact> <history fact> .`. Whether a model can
//! produce that answer therefore depends only on whether the planted
//! positions survive channel truncation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Dialogue, Document};
use crate::error::{Error, Result};

pub const CUE: &str = "ask";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub n_dialogues: usize,
    pub turns_per_dialogue: usize,
    /// Words per turn, except the history-fact turn.
    pub turn_len: usize,
    /// Words in the history-fact turn. Making it long pushes the fact out of
    /// a head-truncated history without lengthening any target.
    pub history_turn_len: usize,
    pub passage_sentences: usize,
    /// Words per sentence, not counting the terminating ".".
    pub sentence_len: usize,
    pub filler_vocab: usize,
    /// Size of each fact vocabulary (passage facts and history facts).
    pub n_fact_tokens: usize,
    pub passage_fact_sentence: usize,
    pub history_fact_turn: usize,
    /// Consecutive word slots each fact fills. The passage run starts at the
    /// planted slot and continues into later sentences; the history run
    /// opens the history-fact turn.
    pub fact_repeat: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            n_dialogues: 10000,
            turns_per_dialogue: 3,
            turn_len: 16,
            history_turn_len: 254,
            passage_sentences: 30,
            sentence_len: 9,
            filler_vocab: 200,
            n_fact_tokens: 10,
            passage_fact_sentence: 26,
            history_fact_turn: 0,
            fact_repeat: 16,
        }
    }
}

impl SynthParams {
    fn validate(&self) -> Result<()> {
        let positive = [
            ("n_dialogues", self.n_dialogues),
            ("turn_len", self.turn_len),
            ("history_turn_len", self.history_turn_len),
            ("passage_sentences", self.passage_sentences),
            ("sentence_len", self.sentence_len),
            ("filler_vocab", self.filler_vocab),
            ("n_fact_tokens", self.n_fact_tokens),
            ("fact_repeat", self.fact_repeat),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidSynthParams(format!("{name} must be positive")));
        }
        if self.turns_per_dialogue < 2 {
            return Err(Error::InvalidSynthParams(
                "turns_per_dialogue must be at least 2".into(),
            ));
        }
        if self.passage_fact_sentence >= self.passage_sentences {
            return Err(Error::InvalidSynthParams(
                "passage_fact_sentence must index a passage sentence".into(),
            ));
        }
        if self.history_fact_turn + 2 > self.turns_per_dialogue {
            return Err(Error::InvalidSynthParams(
                "history_fact_turn must precede the answer turn".into(),
            ));
        }
        if self.turn_len < 2 || self.history_turn_len <= self.fact_repeat {
            return Err(Error::InvalidSynthParams(
                "turns must hold the cue and the history-fact run".into(),
            ));
        }
        if self.first_fact_slot() + self.fact_repeat > self.passage_sentences * self.sentence_len {
            return Err(Error::InvalidSynthParams(
                "passage-fact run overruns the passage".into(),
            ));
        }
        Ok(())
    }

    /// Index of the first passage-fact word among the passage words,
    /// terminators not counted.
    fn first_fact_slot(&self) -> usize {
        self.passage_fact_sentence * self.sentence_len + self.sentence_len / 2
    }

    /// Token offset of the first planted passage fact within the flattened
    /// passage.
    pub fn passage_fact_offset(&self) -> usize {
        self.passage_fact_sentence * (self.sentence_len + 1) + self.sentence_len / 2
    }
}

/// Where each fact of one dialogue was planted and which turn copies it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedFacts {
    pub dialogue_id: String,
    pub passage_fact: String,
    pub passage_sentence: usize,
    pub passage_offset: usize,
    pub history_fact: String,
    pub history_turn: usize,
    /// Index of the turn whose text copies both facts.
    pub target_turn: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthCorpus {
    pub corpus: Corpus,
    pub plan: Vec<PlantedFacts>,
}

pub fn synth_corpus(seed: u64, params: &SynthParams) -> Result<SynthCorpus> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut documents = Vec::with_capacity(params.n_dialogues);
    let mut dialogues = Vec::with_capacity(params.n_dialogues);
    let mut plan = Vec::with_capacity(params.n_dialogues);

    for d in 0..params.n_dialogues {
        let dialogue_id = format!("syn{d:06}");
        let doc_id = format!("doc{d:06}");
        let passage_fact = format!("pf{}", rng.random_range(0..params.n_fact_tokens));
        let history_fact = format!("hf{}", rng.random_range(0..params.n_fact_tokens));

        let mut words = Vec::with_capacity(params.passage_sentences * (params.sentence_len + 1));
        let fact_slots = params.first_fact_slot()..params.first_fact_slot() + params.fact_repeat;
        for s in 0..params.passage_sentences {
            for w in 0..params.sentence_len {
                if fact_slots.contains(&(s * params.sentence_len + w)) {
                    words.push(passage_fact.clone());
                } else {
                    words.push(filler(&mut rng, params));
                }
            }
            words.push(".".to_string());
        }
        debug_assert_eq!(words[params.passage_fact_offset()], passage_fact);

        let answer_turn = params.turns_per_dialogue - 1;
        let cue_turn = answer_turn - 1;
        let mut turns = Vec::with_capacity(params.turns_per_dialogue);
        for t in 0..answer_turn {
            let len = if t == params.history_fact_turn {
                params.history_turn_len
            } else {
                params.turn_len
            };
            let mut turn: Vec<String> = (0..len).map(|_| filler(&mut rng, params)).collect();
            if t == cue_turn {
                turn[0] = CUE.to_string();
            }
            if t == params.history_fact_turn {
                let start = usize::from(t == cue_turn);
                turn[start..start + params.fact_repeat].fill(history_fact.clone());
            }
            turns.push(turn.join(" "));
        }
        turns.push(format!("{passage_fact} {history_fact} ."));

        documents.push(Document {
            doc_id: doc_id.clone(),
            title: "synthetic topic".to_string(),
            body: words.join(" "),
        });
        dialogues.push(Dialogue::new(dialogue_id.clone(), doc_id, turns));
        plan.push(PlantedFacts {
            dialogue_id,
            passage_fact,
            passage_sentence: params.passage_fact_sentence,
            passage_offset: params.passage_fact_offset(),
            history_fact,
            history_turn: params.history_fact_turn,
            target_turn: answer_turn,
        });
    }

    Ok(SynthCorpus {
        corpus: Corpus::new(documents, dialogues)?,
        plan,
    })
}

fn filler(rng: &mut ChaCha8Rng, params: &SynthParams) -> String {
    format!("w{}", rng.random_range(0..params.filler_vocab))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::make_examples;

    fn small() -> SynthParams {
        SynthParams {
            n_dialogues: 5,
            turns_per_dialogue: 6,
            turn_len: 8,
            history_turn_len: 8,
            passage_sentences: 40,
            sentence_len: 9,
            passage_fact_sentence: 30,
            fact_repeat: 3,
            ..SynthParams::default()
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let dir = tempfile::tempdir().unwrap();
        let write = |seed: u64, tag: &str| {
            let s = synth_corpus(seed, &small()).unwrap();
            let dials = dir.path().join(format!("{tag}.dialogues.jsonl"));
            let docs = dir.path().join(format!("{tag}.documents.jsonl"));
            s.corpus.save(&dials, &docs).unwrap();
            (std::fs::read(dials).unwrap(), std::fs::read(docs).unwrap())
        };
        assert_eq!(write(3, "a"), write(3, "b"));
        assert_ne!(write(3, "a"), write(4, "c"));
    }

    #[test]
    fn shape_and_example_count() {
        let s = synth_corpus(1, &small()).unwrap();
        assert_eq!(s.corpus.dialogues().len(), 5);
        assert_eq!(make_examples(&s.corpus).len(), 25);
    }

    #[test]
    fn planted_passage_fact_lies_beyond_256_tokens() {
        let s = synth_corpus(9, &small()).unwrap();
        let examples = make_examples(&s.corpus);
        for facts in &s.plan {
            let dialogue = s
                .corpus
                .dialogues()
                .iter()
                .find(|d| d.dialogue_id == facts.dialogue_id)
                .unwrap();
            let body = &s.corpus.document(&dialogue.doc_id).unwrap().body;
            let offsets: Vec<usize> = body
                .split_whitespace()
                .enumerate()
                .filter(|(_, w)| *w == facts.passage_fact)
                .map(|(i, _)| i)
                .collect();
            assert_eq!(offsets.len(), 3);
            assert_eq!(offsets[0], facts.passage_offset);
            assert!(facts.passage_offset > 256);
            assert!(examples
                .iter()
                .any(|e| e.dialogue_id == facts.dialogue_id
                    && e.target.split_whitespace().any(|w| w == facts.passage_fact)));
        }
    }

    #[test]
    fn facts_have_a_single_source() {
        let s = synth_corpus(2, &small()).unwrap();
        let examples = make_examples(&s.corpus);
        for facts in &s.plan {
            let mine: Vec<_> = examples.iter().filter(|e| e.dialogue_id == facts.dialogue_id).collect();
            let carrying: Vec<_> = mine
                .iter()
                .filter(|e| e.target.split_whitespace().any(|w| w == facts.history_fact))
                .collect();
            assert_eq!(carrying.len(), 1);
            let probe = carrying[0];
            assert_eq!(probe.turn + 1, facts.target_turn);
            let sources: Vec<usize> = probe
                .history
                .iter()
                .filter(|t| t.text.split_whitespace().any(|w| w == facts.history_fact))
                .map(|t| t.index)
                .collect();
            assert_eq!(sources, vec![facts.history_turn]);
            assert!(probe.history.iter().all(|t| !t.text.contains(&facts.passage_fact)));
            assert!(probe.query.starts_with(CUE));
        }
    }

    #[test]
    fn invalid_params() {
        for bad in [
            SynthParams {
                n_dialogues: 0,
                ..small()
            },
            SynthParams {
                turns_per_dialogue: 1,
                ..small()
            },
            SynthParams {
                sentence_len: 0,
                ..small()
            },
            SynthParams {
                passage_fact_sentence: 40,
                ..small()
            },
            SynthParams {
                history_fact_turn: 5,
                ..small()
            },
            SynthParams {
                fact_repeat: 8,
                ..small()
            },
            SynthParams {
                fact_repeat: 0,
                ..small()
            },
        ] {
            assert!(matches!(synth_corpus(0, &bad), Err(Error::InvalidSynthParams(_))));
        }
    }
}
