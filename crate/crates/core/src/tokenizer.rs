//! Character- or whitespace-level tokenization with a corpus-built
//! vocabulary.
//!
//! The first eight ids are reserved for control and prompt tokens. Prompts
//! (`question:`, `passage:`, `history:`) are single ids so that truncation can
//! never split one. Raw text is never encoded to a reserved id: a word that
//! spells a reserved string is escaped with a leading backslash and becomes
//! an ordinary vocabulary entry.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};

pub type TokenId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Char,
    Word,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "char" => Ok(Mode::Char),
            "word" => Ok(Mode::Word),
            other => Err(Error::InvalidVocab(format!("unknown tokenizer mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Special {
    Pad,
    Bos,
    Eos,
    Unk,
    Sep,
    QuestionPrompt,
    PassagePrompt,
    HistoryPrompt,
}

impl Special {
    pub const ALL: [Special; 8] = [
        Special::Pad,
        Special::Bos,
        Special::Eos,
        Special::Unk,
        Special::Sep,
        Special::QuestionPrompt,
        Special::PassagePrompt,
        Special::HistoryPrompt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Special::Pad => "<pad>",
            Special::Bos => "<s>",
            Special::Eos => "</s>",
            Special::Unk => "<unk>",
            Special::Sep => "<sep>",
            Special::QuestionPrompt => "question:",
            Special::PassagePrompt => "passage:",
            Special::HistoryPrompt => "history:",
        }
    }

    fn key(self) -> &'static str {
        match self {
            Special::Pad => "pad",
            Special::Bos => "bos",
            Special::Eos => "eos",
            Special::Unk => "unk",
            Special::Sep => "sep",
            Special::QuestionPrompt => "question",
            Special::PassagePrompt => "passage",
            Special::HistoryPrompt => "history",
        }
    }

    /// Specials occupy the first ids, in `ALL` order.
    pub fn id(self) -> TokenId {
        Special::ALL.iter().position(|&s| s == self).unwrap() as TokenId
    }
}

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;
pub const SEP: TokenId = 4;
pub const Q_PROMPT: TokenId = 5;
pub const P_PROMPT: TokenId = 6;
pub const H_PROMPT: TokenId = 7;
pub const N_SPECIAL: usize = 8;

fn is_reserved(s: &str) -> bool {
    Special::ALL.iter().any(|sp| sp.as_str() == s)
}

fn escape(token: &str) -> String {
    if is_reserved(token.trim_start_matches('\\')) {
        format!("\\{token}")
    } else {
        token.to_string()
    }
}

fn unescape(token: &str) -> &str {
    match token.strip_prefix('\\') {
        Some(rest) if is_reserved(rest.trim_start_matches('\\')) => rest,
        _ => token,
    }
}

/// Splits raw text into surface tokens (already escaped).
pub fn pieces(mode: Mode, text: &str) -> Vec<String> {
    match mode {
        Mode::Word => text.split_whitespace().map(escape).collect(),
        Mode::Char => text
            .chars()
            .filter(|c| !c.is_whitespace())
            .map(|c| c.to_string())
            .collect(),
    }
}

/// The form `decode(encode(text))` takes when every token is in-vocabulary.
pub fn normalize(mode: Mode, text: &str) -> String {
    match mode {
        Mode::Word => text.split_whitespace().collect::<Vec<_>>().join(" "),
        Mode::Char => text.chars().filter(|c| !c.is_whitespace()).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    mode: Mode,
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    mode: Mode,
    tokens: Vec<String>,
    specials: BTreeMap<String, TokenId>,
}

impl Vocab {
    fn from_tokens(mode: Mode, tokens: Vec<String>) -> Result<Self> {
        for sp in Special::ALL {
            if tokens.get(sp.id() as usize).map(String::as_str) != Some(sp.as_str()) {
                return Err(Error::InvalidVocab(format!(
                    "special {} must have id {}",
                    sp.as_str(),
                    sp.id()
                )));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::InvalidVocab(format!("duplicate token {t:?}")));
            }
        }
        Ok(Vocab { mode, tokens, index })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn special(&self, special: Special) -> TokenId {
        special.id()
    }

    /// Unknown pieces map to UNK; reserved strings in raw text are escaped,
    /// never mapped to a special id.
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        pieces(self.mode, text)
            .iter()
            .map(|p| match self.index.get(p) {
                Some(&id) if id as usize >= N_SPECIAL => id,
                _ => UNK,
            })
            .collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        let sep = match self.mode {
            Mode::Word => " ",
            Mode::Char => "",
        };
        ids.iter()
            .map(|&id| match self.tokens.get(id as usize) {
                Some(t) if id as usize >= N_SPECIAL => unescape(t),
                Some(t) => t.as_str(),
                None => Special::Unk.as_str(),
            })
            .collect::<Vec<_>>()
            .join(sep)
    }

    /// Decodes a generated sequence, dropping control tokens (PAD/BOS/EOS).
    pub fn decode_generated(&self, ids: &[TokenId]) -> String {
        let kept: Vec<TokenId> = ids
            .iter()
            .copied()
            .filter(|&id| !matches!(id, PAD | BOS | EOS))
            .collect();
        self.decode(&kept)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = VocabFile {
            mode: self.mode,
            tokens: self.tokens.clone(),
            specials: Special::ALL.iter().map(|s| (s.key().to_string(), s.id())).collect(),
        };
        let text = serde_json::to_string(&file).expect("vocab serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: VocabFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        for sp in Special::ALL {
            if file.specials.get(sp.key()) != Some(&sp.id()) {
                return Err(Error::InvalidVocab(format!("specials table disagrees on {}", sp.key())));
            }
        }
        Vocab::from_tokens(file.mode, file.tokens)
    }
}

/// Counts pieces over document bodies, titles and dialogue turns. Ties in
/// frequency are ordered lexicographically so the id assignment is stable.
pub fn build_vocab(corpus: &Corpus, mode: Mode, min_count: usize) -> Result<Vocab> {
    let texts = corpus
        .documents()
        .iter()
        .flat_map(|d| [d.title.as_str(), d.body.as_str()])
        .chain(
            corpus
                .dialogues()
                .iter()
                .flat_map(|d| d.turns.iter().map(|t| t.text.as_str())),
        );
    build_vocab_from_texts(texts, mode, min_count)
}

pub fn build_vocab_from_texts<'a>(
    texts: impl IntoIterator<Item = &'a str>,
    mode: Mode,
    min_count: usize,
) -> Result<Vocab> {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for text in texts {
        for p in pieces(mode, text) {
            *counts.entry(p).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut kept: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_count.max(1)).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let tokens = Special::ALL
        .iter()
        .map(|s| s.as_str().to_string())
        .chain(kept.into_iter().map(|(t, _)| t))
        .collect();
    Vocab::from_tokens(mode, tokens)
}
