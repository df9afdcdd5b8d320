use std::fmt;
use std::str::FromStr;

use fidconv_core::{PackedRecord, TokenChannel, TokenId};
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::model::FidModel;

/// Serialized as `greedy` or `beam:<width>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Strategy {
    Greedy,
    Beam { width: usize },
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Greedy => f.write_str("greedy"),
            Strategy::Beam { width } => write!(f, "beam:{width}"),
        }
    }
}

impl FromStr for Strategy {
    type Err = ModelError;

    /// `greedy` or `beam:<width>`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "greedy" {
            return Ok(Strategy::Greedy);
        }
        s.strip_prefix("beam:")
            .and_then(|w| w.parse().ok())
            .filter(|&w: &usize| w > 0)
            .map(|width| Strategy::Beam { width })
            .ok_or_else(|| ModelError::InvalidConfig(format!("unknown decoding strategy {s:?}")))
    }
}

impl TryFrom<String> for Strategy {
    type Error = ModelError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Strategy> for String {
    fn from(s: Strategy) -> String {
        s.to_string()
    }
}

/// Generates one token sequence per record, `batch_size` records per encoder
/// pass. Outputs hold no BOS, EOS or PAD and at most `max_len` tokens.
pub fn generate(
    model: &FidModel,
    records: &[PackedRecord],
    strategy: Strategy,
    max_len: usize,
    batch_size: usize,
) -> Result<Vec<Vec<TokenId>>> {
    let mut out = Vec::with_capacity(records.len());
    for chunk in records.chunks(batch_size.max(1)) {
        let channels: Vec<&[TokenChannel]> = chunk.iter().map(|r| r.channels.as_slice()).collect();
        let memory = model.encode_batch(&channels, false)?;
        match strategy {
            Strategy::Greedy => out.extend(model.greedy(&memory, max_len)?),
            Strategy::Beam { width } => {
                for row in 0..chunk.len() {
                    out.push(model.beam(&memory, row, width, max_len)?);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_names() {
        assert_eq!("greedy".parse::<Strategy>().unwrap(), Strategy::Greedy);
        assert_eq!("beam:4".parse::<Strategy>().unwrap(), Strategy::Beam { width: 4 });
        assert!("beam:0".parse::<Strategy>().is_err());
        assert!("sample".parse::<Strategy>().is_err());
        assert_eq!(Strategy::Beam { width: 3 }.to_string(), "beam:3");
        let json = serde_json::to_string(&Strategy::Beam { width: 2 }).unwrap();
        assert_eq!(json, "\"beam:2\"");
        assert_eq!(
            serde_json::from_str::<Strategy>(&json).unwrap(),
            Strategy::Beam { width: 2 }
        );
    }
}
