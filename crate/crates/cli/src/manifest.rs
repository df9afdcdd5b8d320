use std::collections::BTreeMap;
use std::path::Path;

use fidconv_core::MetricReport;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ResolvedConfig;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusChecksums {
    pub dialogues: String,
    pub documents: String,
}

/// Per-setting record of what a run used and produced. Each command updates
/// its own fields and leaves the rest in place.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config: Option<ResolvedConfig>,
    pub corpus: Option<CorpusChecksums>,
    pub vocab_sha256: Option<String>,
    pub packed_sha256: BTreeMap<String, String>,
    pub checkpoint_sha256: Option<String>,
    pub split: Option<String>,
    pub report: Option<MetricReport>,
    pub report_sha256: Option<String>,
    /// Seconds spent in each command.
    pub wall_clock: BTreeMap<String, f64>,
}

impl Default for RunManifest {
    fn default() -> Self {
        RunManifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: None,
            corpus: None,
            vocab_sha256: None,
            packed_sha256: BTreeMap::new(),
            checkpoint_sha256: None,
            split: None,
            report: None,
            report_sha256: None,
            wall_clock: BTreeMap::new(),
        }
    }
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}:{}: {e}", path.display(), e.line())))
    }

    pub fn load_or_default(path: &Path) -> Result<Self> {
        if path.exists() {
            RunManifest::load(path)
        } else {
            Ok(RunManifest::default())
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text).map_err(|e| CliError::io(path, e))
    }
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_bytes(&bytes))
}
