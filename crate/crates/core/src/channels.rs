//! Prompted input channels and the five channel settings.
//!
//! A channel is one encoder input. Passage-bearing parts (WP, SP) start with
//! `question: <query> passage:` and lose passage text from the tail when over
//! budget. History parts (AH, NE) start with `history:` followed by the turns
//! joined with SEP, and lose the oldest tokens first. Prompts and the query
//! are never truncated; a budget too small to hold them is an error.
//!
//! Single-channel-WP is one channel made of a WP part and an AH part, each
//! with its own budget. The FiD settings use several channels that share one
//! encoder; when a history channel is present it is always last.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bm25::{split_sentences, Bm25Index, Bm25Params};
use crate::corpus::Example;
use crate::error::{Error, Result};
use crate::tokenizer::{Special, TokenId, Vocab, PAD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Wp,
    Sp,
    Ah,
    Ne,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentKind {
    Prompt,
    Query,
    Passage,
    Sentence,
    HistoryTurn,
    Separator,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub kind: SegmentKind,
    pub text: String,
}

impl Segment {
    fn prompt(special: Special) -> Self {
        Segment {
            kind: SegmentKind::Prompt,
            text: special.as_str().to_string(),
        }
    }

    fn separator() -> Self {
        Segment {
            kind: SegmentKind::Separator,
            text: Special::Sep.as_str().to_string(),
        }
    }

    fn text(kind: SegmentKind, text: &str) -> Self {
        Segment {
            kind,
            text: text.to_string(),
        }
    }

    fn ids(&self, vocab: &Vocab) -> Vec<TokenId> {
        match self.kind {
            SegmentKind::Prompt => {
                let special = Special::ALL
                    .into_iter()
                    .find(|s| s.as_str() == self.text)
                    .expect("prompt segments hold a special token");
                vec![vocab.special(special)]
            }
            SegmentKind::Separator => vec![vocab.special(Special::Sep)],
            _ => vocab.encode(&self.text),
        }
    }
}

/// Which end of the content loses tokens when a part is over budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TruncSide {
    /// Keep the beginning (passages).
    Tail,
    /// Keep the end (history).
    Head,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelPart {
    pub role: Role,
    pub segments: Vec<Segment>,
    pub trunc_side: TruncSide,
    pub budget: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Channel {
    pub parts: Vec<ChannelPart>,
}

impl Channel {
    fn single(part: ChannelPart) -> Self {
        Channel { parts: vec![part] }
    }

    pub fn role(&self) -> Role {
        self.parts[0].role
    }

    pub fn max_len(&self) -> usize {
        self.parts.iter().map(|p| p.budget).sum()
    }

    pub fn segments(&self) -> impl Iterator<Item = &Segment> {
        self.parts.iter().flat_map(|p| p.segments.iter())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Setting {
    #[serde(rename = "Single-channel-WP")]
    SingleWp,
    #[serde(rename = "Single-channel-NE")]
    SingleNe,
    #[serde(rename = "FiD-SP")]
    FidSp,
    #[serde(rename = "FiD-SP-AH")]
    FidSpAh,
    #[serde(rename = "FiD-WP-AH")]
    FidWpAh,
}

impl Setting {
    pub const ALL: [Setting; 5] = [
        Setting::SingleWp,
        Setting::SingleNe,
        Setting::FidSp,
        Setting::FidSpAh,
        Setting::FidWpAh,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Setting::SingleWp => "Single-channel-WP",
            Setting::SingleNe => "Single-channel-NE",
            Setting::FidSp => "FiD-SP",
            Setting::FidSpAh => "FiD-SP-AH",
            Setting::FidWpAh => "FiD-WP-AH",
        }
    }

    pub fn channel_count(self, sp_k: usize) -> usize {
        match self {
            Setting::SingleWp | Setting::SingleNe => 1,
            Setting::FidSp => sp_k,
            Setting::FidSpAh => sp_k + 1,
            Setting::FidWpAh => 2,
        }
    }

    pub fn uses_passage(self) -> bool {
        self != Setting::SingleNe
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Setting::ALL
            .into_iter()
            .find(|setting| setting.name() == s)
            .ok_or_else(|| Error::UnknownSetting(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpOrder {
    /// BM25 rank order, best first.
    Rank,
    /// Original sentence position within the passage.
    Position,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Budgets {
    /// Each of the two parts of Single-channel-WP.
    pub single_part: usize,
    /// Single-channel-NE.
    pub single_ne: usize,
    /// Every channel of the FiD settings.
    pub fid_channel: usize,
}

impl Default for Budgets {
    fn default() -> Self {
        Budgets {
            single_part: 256,
            single_ne: 512,
            fid_channel: 512,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssembleOptions {
    pub budgets: Budgets,
    pub sp_k: usize,
    pub sp_order: SpOrder,
    pub bm25: Bm25Params,
}

impl Default for AssembleOptions {
    fn default() -> Self {
        AssembleOptions {
            budgets: Budgets::default(),
            sp_k: 10,
            sp_order: SpOrder::Rank,
            bm25: Bm25Params::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelSet {
    pub setting: Setting,
    pub channels: Vec<Channel>,
}

impl ChannelSet {
    pub fn budgets(&self) -> Vec<usize> {
        self.channels.iter().map(Channel::max_len).collect()
    }
}

fn passage_part(role: Role, query: &str, content: Segment, budget: usize, vocab: &Vocab) -> Result<ChannelPart> {
    let part = ChannelPart {
        role,
        segments: vec![
            Segment::prompt(Special::QuestionPrompt),
            Segment::text(SegmentKind::Query, query),
            Segment::prompt(Special::PassagePrompt),
            content,
        ],
        trunc_side: TruncSide::Tail,
        budget,
    };
    check_protected(&part, vocab)?;
    Ok(part)
}

fn history_part(role: Role, example: &Example, budget: usize, vocab: &Vocab) -> Result<ChannelPart> {
    let Some((last, older)) = example.history.split_last() else {
        return Err(Error::EmptyHistory {
            dialogue_id: example.dialogue_id.clone(),
            turn: example.turn,
        });
    };
    let mut segments = vec![Segment::prompt(Special::HistoryPrompt)];
    for turn in older {
        segments.push(Segment::text(SegmentKind::HistoryTurn, &turn.text));
        segments.push(Segment::separator());
    }
    segments.push(Segment::text(SegmentKind::Query, &last.text));
    let part = ChannelPart {
        role,
        segments,
        trunc_side: TruncSide::Head,
        budget,
    };
    check_protected(&part, vocab)?;
    Ok(part)
}

/// Splits a part's token ids into (protected prefix, truncatable content,
/// protected suffix).
fn partition(part: &ChannelPart, vocab: &Vocab) -> (Vec<TokenId>, Vec<TokenId>, Vec<TokenId>) {
    let mut prefix = Vec::new();
    let mut content = Vec::new();
    let mut suffix = Vec::new();
    match part.trunc_side {
        TruncSide::Tail => {
            let mut in_content = false;
            for seg in &part.segments {
                in_content |= matches!(seg.kind, SegmentKind::Passage | SegmentKind::Sentence);
                let target = if in_content { &mut content } else { &mut prefix };
                target.extend(seg.ids(vocab));
            }
        }
        TruncSide::Head => {
            let n = part.segments.len();
            for (i, seg) in part.segments.iter().enumerate() {
                let ids = seg.ids(vocab);
                if i == n - 1 && seg.kind == SegmentKind::Query {
                    suffix.extend(ids);
                } else if seg.kind == SegmentKind::Prompt && content.is_empty() {
                    prefix.extend(ids);
                } else {
                    content.extend(ids);
                }
            }
        }
    }
    (prefix, content, suffix)
}

fn check_protected(part: &ChannelPart, vocab: &Vocab) -> Result<()> {
    let (prefix, _, suffix) = partition(part, vocab);
    let needed = prefix.len() + suffix.len();
    if needed > part.budget {
        return Err(Error::QueryExceedsBudget {
            needed,
            budget: part.budget,
        });
    }
    Ok(())
}

/// `question: <query> passage: <passage>`, passage truncated at the tail.
pub fn build_wp(example: &Example, passage: &str, max_len: usize, vocab: &Vocab) -> Result<Channel> {
    passage_part(
        Role::Wp,
        &example.query,
        Segment::text(SegmentKind::Passage, passage),
        max_len,
        vocab,
    )
    .map(Channel::single)
}

/// One `question: <query> passage: <sentence>` channel per BM25-selected
/// sentence. Always returns `k` channels.
pub fn build_sp(
    example: &Example,
    passage: &str,
    k: usize,
    max_len: usize,
    order: SpOrder,
    bm25: Bm25Params,
    vocab: &Vocab,
) -> Result<Vec<Channel>> {
    let sentences = split_sentences(passage);
    let index = Bm25Index::build(&sentences, vocab.mode(), bm25)?;
    let mut picks = index.top_k(&example.query, k.max(1));
    if order == SpOrder::Position {
        picks.sort();
    }
    picks
        .into_iter()
        .map(|i| {
            passage_part(
                Role::Sp,
                &example.query,
                Segment::text(SegmentKind::Sentence, &sentences[i].text),
                max_len,
                vocab,
            )
            .map(Channel::single)
        })
        .collect()
}

/// `history: turn0 SEP turn1 SEP ... turn_t`, oldest tokens dropped first.
pub fn build_ah(example: &Example, max_len: usize, vocab: &Vocab) -> Result<Channel> {
    history_part(Role::Ah, example, max_len, vocab).map(Channel::single)
}

/// History-only channel; packs to exactly the same ids as [`build_ah`].
pub fn build_ne(example: &Example, max_len: usize, vocab: &Vocab) -> Result<Channel> {
    history_part(Role::Ne, example, max_len, vocab).map(Channel::single)
}

pub fn assemble(
    setting: Setting,
    example: &Example,
    passage: &str,
    opts: &AssembleOptions,
    vocab: &Vocab,
) -> Result<ChannelSet> {
    let b = opts.budgets;
    let sp = || {
        build_sp(
            example,
            passage,
            opts.sp_k,
            b.fid_channel,
            opts.sp_order,
            opts.bm25,
            vocab,
        )
    };
    let channels = match setting {
        Setting::SingleWp => {
            let mut wp = build_wp(example, passage, b.single_part, vocab)?;
            let ah = history_part(Role::Ah, example, b.single_part, vocab)?;
            wp.parts.push(ah);
            vec![wp]
        }
        Setting::SingleNe => vec![build_ne(example, b.single_ne, vocab)?],
        Setting::FidSp => sp()?,
        Setting::FidSpAh => {
            let mut channels = sp()?;
            channels.push(build_ah(example, b.fid_channel, vocab)?);
            channels
        }
        Setting::FidWpAh => vec![
            build_wp(example, passage, b.fid_channel, vocab)?,
            build_ah(example, b.fid_channel, vocab)?,
        ],
    };
    Ok(ChannelSet { setting, channels })
}

/// Per-part bookkeeping kept alongside a packed channel (not serialized).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PartStat {
    pub role: Role,
    pub truncated: bool,
    pub source_len: usize,
    pub kept_len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenChannel {
    pub ids: Vec<TokenId>,
    pub mask: Vec<u8>,
    pub truncated: bool,
    #[serde(skip)]
    pub parts: Vec<PartStat>,
}

impl TokenChannel {
    /// Number of real (unpadded) tokens.
    pub fn len(&self) -> usize {
        self.mask.iter().filter(|&&m| m != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn real_ids(&self) -> &[TokenId] {
        &self.ids[..self.len()]
    }

    /// A channel of `len` PAD tokens with an all-zero mask.
    pub fn padding(len: usize) -> Self {
        TokenChannel {
            ids: vec![PAD; len],
            mask: vec![0; len],
            truncated: false,
            parts: Vec::new(),
        }
    }
}

fn pack_part(part: &ChannelPart, vocab: &Vocab) -> Result<(Vec<TokenId>, PartStat)> {
    let (prefix, content, suffix) = partition(part, vocab);
    let fixed = prefix.len() + suffix.len();
    if fixed > part.budget {
        return Err(Error::QueryExceedsBudget {
            needed: fixed,
            budget: part.budget,
        });
    }
    let room = part.budget - fixed;
    let kept: &[TokenId] = if content.len() <= room {
        &content
    } else {
        match part.trunc_side {
            TruncSide::Tail => &content[..room],
            TruncSide::Head => &content[content.len() - room..],
        }
    };
    let mut ids = prefix.clone();
    ids.extend_from_slice(kept);
    ids.extend_from_slice(&suffix);
    let stat = PartStat {
        role: part.role,
        truncated: kept.len() < content.len(),
        source_len: fixed + content.len(),
        kept_len: ids.len(),
    };
    Ok((ids, stat))
}

pub fn pack_channel(channel: &Channel, vocab: &Vocab) -> Result<TokenChannel> {
    let mut ids = Vec::with_capacity(channel.max_len());
    let mut parts = Vec::with_capacity(channel.parts.len());
    for part in &channel.parts {
        let (part_ids, stat) = pack_part(part, vocab)?;
        ids.extend(part_ids);
        parts.push(stat);
    }
    let len = ids.len();
    let max_len = channel.max_len();
    ids.resize(max_len, PAD);
    let mut mask = vec![1u8; len];
    mask.resize(max_len, 0);
    Ok(TokenChannel {
        ids,
        mask,
        truncated: parts.iter().any(|p| p.truncated),
        parts,
    })
}

/// Tokenizes, truncates and pads every channel of the set.
pub fn pack(set: &ChannelSet, vocab: &Vocab) -> Result<Vec<TokenChannel>> {
    set.channels.iter().map(|c| pack_channel(c, vocab)).collect()
}

/// One line of a packed-dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackedRecord {
    pub setting: Setting,
    pub channels: Vec<TokenChannel>,
    pub target_ids: Vec<TokenId>,
}

pub fn pack_example(
    setting: Setting,
    example: &Example,
    passage: &str,
    opts: &AssembleOptions,
    vocab: &Vocab,
) -> Result<PackedRecord> {
    let set = assemble(setting, example, passage, opts, vocab)?;
    Ok(PackedRecord {
        setting,
        channels: pack(&set, vocab)?,
        target_ids: vocab.encode(&example.target),
    })
}
