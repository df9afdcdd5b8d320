//! Topic-grounded dialogue corpora and the examples derived from them.
//!
//! On disk a corpus is two JSON-lines files: one document (topic passage) per
//! line and one dialogue per line, each dialogue pointing at its document by
//! `doc_id`. Everything is validated on load so the rest of the pipeline can
//! assume referential integrity.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Turn {
    pub index: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dialogue {
    pub dialogue_id: String,
    pub doc_id: String,
    pub turns: Vec<Turn>,
}

#[derive(Serialize, Deserialize)]
struct DialogueRecord {
    dialogue_id: String,
    doc_id: String,
    turns: Vec<String>,
}

impl Dialogue {
    pub fn new(dialogue_id: impl Into<String>, doc_id: impl Into<String>, turns: Vec<String>) -> Self {
        Dialogue {
            dialogue_id: dialogue_id.into(),
            doc_id: doc_id.into(),
            turns: turns
                .into_iter()
                .enumerate()
                .map(|(index, text)| Turn { index, text })
                .collect(),
        }
    }

    fn validate(&self) -> Result<()> {
        let invalid = |reason: String| Error::InvalidDialogue {
            dialogue_id: self.dialogue_id.clone(),
            reason,
        };
        if self.turns.len() < 2 {
            return Err(invalid(format!("needs at least 2 turns, found {}", self.turns.len())));
        }
        for (i, turn) in self.turns.iter().enumerate() {
            if turn.index != i {
                return Err(invalid(format!("turn indices not contiguous at {i}")));
            }
            if turn.text.trim().is_empty() {
                return Err(invalid(format!("turn {i} is empty")));
            }
        }
        Ok(())
    }
}

/// One prediction unit: everything up to turn `turn` is history, turn
/// `turn + 1` is the target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub dialogue_id: String,
    pub turn: usize,
    pub history: Vec<Turn>,
    pub query: String,
    pub target: String,
    pub doc_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    documents: Vec<Document>,
    dialogues: Vec<Dialogue>,
    doc_index: HashMap<String, usize>,
}

impl Corpus {
    /// Validates ids, turn structure and document references.
    pub fn new(documents: Vec<Document>, dialogues: Vec<Dialogue>) -> Result<Self> {
        let mut doc_index = HashMap::with_capacity(documents.len());
        for (i, doc) in documents.iter().enumerate() {
            if doc.body.trim().is_empty() {
                return Err(Error::InvalidDocument {
                    doc_id: doc.doc_id.clone(),
                    reason: "empty body".into(),
                });
            }
            if doc_index.insert(doc.doc_id.clone(), i).is_some() {
                return Err(Error::DuplicateId {
                    kind: "document",
                    id: doc.doc_id.clone(),
                });
            }
        }
        let mut seen = HashSet::with_capacity(dialogues.len());
        for dialogue in &dialogues {
            if !seen.insert(dialogue.dialogue_id.as_str()) {
                return Err(Error::DuplicateId {
                    kind: "dialogue",
                    id: dialogue.dialogue_id.clone(),
                });
            }
            dialogue.validate()?;
            if !doc_index.contains_key(&dialogue.doc_id) {
                return Err(Error::DanglingDocument {
                    dialogue_id: dialogue.dialogue_id.clone(),
                    doc_id: dialogue.doc_id.clone(),
                });
            }
        }
        Ok(Corpus {
            documents,
            dialogues,
            doc_index,
        })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn dialogues(&self) -> &[Dialogue] {
        &self.dialogues
    }

    pub fn document(&self, doc_id: &str) -> Option<&Document> {
        self.doc_index.get(doc_id).map(|&i| &self.documents[i])
    }

    /// Keeps only the listed dialogues (and every document, so references
    /// stay valid).
    pub fn subset(&self, dialogue_ids: &HashSet<&str>) -> Corpus {
        Corpus {
            documents: self.documents.clone(),
            dialogues: self
                .dialogues
                .iter()
                .filter(|d| dialogue_ids.contains(d.dialogue_id.as_str()))
                .cloned()
                .collect(),
            doc_index: self.doc_index.clone(),
        }
    }

    pub fn save(&self, dialogues_path: &Path, documents_path: &Path) -> Result<()> {
        write_jsonl(documents_path, self.documents.iter())?;
        write_jsonl(
            dialogues_path,
            self.dialogues.iter().map(|d| DialogueRecord {
                dialogue_id: d.dialogue_id.clone(),
                doc_id: d.doc_id.clone(),
                turns: d.turns.iter().map(|t| t.text.clone()).collect(),
            }),
        )
    }
}

pub fn load_corpus(dialogues_path: &Path, documents_path: &Path) -> Result<Corpus> {
    let documents: Vec<Document> = read_jsonl(documents_path)?;
    let dialogues = read_jsonl::<DialogueRecord>(dialogues_path)?
        .into_iter()
        .map(|r| Dialogue::new(r.dialogue_id, r.doc_id, r.turns))
        .collect();
    Corpus::new(documents, dialogues)
}

/// Every turn from index 1 onward becomes a target, conditioned on all the
/// turns before it.
pub fn make_examples(corpus: &Corpus) -> Vec<Example> {
    corpus.dialogues().iter().flat_map(dialogue_examples).collect()
}

pub fn dialogue_examples(dialogue: &Dialogue) -> impl Iterator<Item = Example> + '_ {
    (0..dialogue.turns.len().saturating_sub(1)).map(move |t| Example {
        dialogue_id: dialogue.dialogue_id.clone(),
        turn: t,
        history: dialogue.turns[..=t].to_vec(),
        query: dialogue.turns[t].text.clone(),
        target: dialogue.turns[t + 1].text.clone(),
        doc_id: dialogue.doc_id.clone(),
    })
}

/// Reads one JSON value per non-blank line; parse errors carry the line number.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: impl Iterator<Item = T>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, &item).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str) -> Document {
        Document {
            doc_id: id.into(),
            title: "t".into(),
            body: "some news.".into(),
        }
    }

    fn turns(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("turn {i}")).collect()
    }

    #[test]
    fn minimal_corpus_loads_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let docs = dir.path().join("docs.jsonl");
        let dials = dir.path().join("dials.jsonl");
        std::fs::write(&docs, r#"{"doc_id":"d1","title":"T","body":"B one. B two."}"#).unwrap();
        std::fs::write(&dials, r#"{"dialogue_id":"x","doc_id":"d1","turns":["a","b","c","d"]}"#).unwrap();
        let corpus = load_corpus(&dials, &docs).unwrap();
        assert_eq!(corpus.documents().len(), 1);
        assert_eq!(corpus.dialogues().len(), 1);
        assert_eq!(corpus.dialogues()[0].turns.len(), 4);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let docs = dir.path().join("docs.jsonl");
        let dials = dir.path().join("dials.jsonl");
        std::fs::write(&docs, "{\"doc_id\":\"d1\",\"title\":\"T\",\"body\":\"B\"}\n{oops\n").unwrap();
        std::fs::write(&dials, "").unwrap();
        let err = load_corpus(&dials, &docs).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn dangling_reference_is_rejected() {
        let err = Corpus::new(vec![doc("d1")], vec![Dialogue::new("a", "X", turns(3))]).unwrap_err();
        assert!(matches!(err, Error::DanglingDocument { .. }));
        assert!(err.to_string().contains("dangling document reference"));
    }

    #[test]
    fn single_turn_dialogue_is_named_in_error() {
        let dialogues = vec![
            Dialogue::new("ok1", "d1", turns(3)),
            Dialogue::new("short", "d1", turns(1)),
            Dialogue::new("ok2", "d1", turns(5)),
        ];
        let err = Corpus::new(vec![doc("d1")], dialogues).unwrap_err();
        match &err {
            Error::InvalidDialogue { dialogue_id, .. } => assert_eq!(dialogue_id, "short"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let err = Corpus::new(vec![doc("d1"), doc("d1")], vec![]).unwrap_err();
        assert!(matches!(err, Error::DuplicateId { kind: "document", .. }));
        let err = Corpus::new(
            vec![doc("d1")],
            vec![Dialogue::new("a", "d1", turns(2)), Dialogue::new("a", "d1", turns(2))],
        )
        .unwrap_err();
        assert!(matches!(err, Error::DuplicateId { kind: "dialogue", .. }));
    }

    #[test]
    fn example_policy() {
        let corpus = Corpus::new(vec![doc("d1")], vec![Dialogue::new("a", "d1", turns(4))]).unwrap();
        let examples = make_examples(&corpus);
        assert_eq!(examples.len(), 3);
        for (t, ex) in examples.iter().enumerate() {
            assert_eq!(ex.history.len(), t + 1);
            assert_eq!(ex.query, ex.history.last().unwrap().text);
            assert_eq!(ex.target, format!("turn {}", t + 1));
        }

        let corpus = Corpus::new(vec![doc("d1")], vec![Dialogue::new("a", "d1", turns(2))]).unwrap();
        let examples = make_examples(&corpus);
        assert_eq!(examples.len(), 1);
        assert_eq!(
            examples[0].history,
            vec![Turn {
                index: 0,
                text: "turn 0".into()
            }]
        );
        assert_eq!(examples[0].target, "turn 1");
    }

    #[test]
    fn example_count_matches_enumeration() {
        let dialogues = (0..10)
            .map(|i| Dialogue::new(format!("d{i}"), "d1", turns(20)))
            .collect();
        let corpus = Corpus::new(vec![doc("d1")], dialogues).unwrap();
        let mut expected = 0;
        for d in corpus.dialogues() {
            for t in 0..d.turns.len() {
                if t + 1 < d.turns.len() {
                    expected += 1;
                }
            }
        }
        assert_eq!(expected, 190);
        assert_eq!(make_examples(&corpus).len(), expected);
        assert_eq!(make_examples(&corpus), make_examples(&corpus));
    }
}
