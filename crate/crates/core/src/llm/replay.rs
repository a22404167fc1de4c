//! Recorded-completion cache keyed by request fingerprint. A populated
//! cache makes every LLM-backed evaluation fully deterministic and
//! network-free.

use super::LlmError;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

/// Whether completions come from the network, the network plus a cache
/// being written, or a cache alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CacheMode {
    #[default]
    Live,
    Record,
    Replay,
}

impl std::str::FromStr for CacheMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(CacheMode::Live),
            "record" => Ok(CacheMode::Record),
            "replay" => Ok(CacheMode::Replay),
            other => Err(format!("unknown cache mode `{other}`")),
        }
    }
}

/// One recorded exchange. The fingerprint is a hash of the strategy,
/// the full prompt text, and the model name.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheEntry {
    pub fingerprint: String,
    pub strategy: String,
    pub prompt: String,
    pub completion: String,
    pub recorded_latency: f64,
}

/// Hash identifying a unique (strategy, prompt, model) request.
pub fn fingerprint(strategy: &str, prompt: &str, model: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(strategy.as_bytes());
    hasher.update(b"\n");
    hasher.update(model.as_bytes());
    hasher.update(b"\n");
    hasher.update(prompt.as_bytes());
    hex_encode(&hasher.finalize())
}

fn hex_encode(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// JSON-lines backed completion cache. Reads are concurrent; appends
/// are serialized through one writer. Later lines for the same
/// fingerprint overwrite earlier ones on load, so a re-recorded session
/// reflects the completion that was finally used.
pub struct ReplayCache {
    entries: RwLock<HashMap<String, CacheEntry>>,
    writer: Option<Mutex<File>>,
    path: Option<PathBuf>,
}

impl ReplayCache {
    /// Empty cache with no backing file.
    pub fn in_memory() -> Self {
        ReplayCache {
            entries: RwLock::new(HashMap::new()),
            writer: None,
            path: None,
        }
    }

    /// Load an existing cache file for replay.
    pub fn open_replay(path: &Path) -> Result<Self, LlmError> {
        let entries = Self::load_entries(path)?;
        Ok(ReplayCache {
            entries: RwLock::new(entries),
            writer: None,
            path: Some(path.to_path_buf()),
        })
    }

    /// Open (or create) a cache file for recording. Existing entries
    /// are loaded so an interrupted recording run can resume.
    pub fn open_record(path: &Path) -> Result<Self, LlmError> {
        let entries = if path.exists() {
            Self::load_entries(path)?
        } else {
            HashMap::new()
        };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| LlmError::Cache(format!("{}: {e}", path.display())))?;
        Ok(ReplayCache {
            entries: RwLock::new(entries),
            writer: Some(Mutex::new(file)),
            path: Some(path.to_path_buf()),
        })
    }

    fn load_entries(path: &Path) -> Result<HashMap<String, CacheEntry>, LlmError> {
        let file =
            File::open(path).map_err(|e| LlmError::Cache(format!("{}: {e}", path.display())))?;
        let mut entries = HashMap::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| LlmError::Cache(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: CacheEntry = serde_json::from_str(&line).map_err(|e| {
                LlmError::Cache(format!("{} line {}: {e}", path.display(), idx + 1))
            })?;
            entries.insert(entry.fingerprint.clone(), entry);
        }
        Ok(entries)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.read().unwrap().is_empty()
    }

    pub fn lookup(&self, fingerprint: &str) -> Option<CacheEntry> {
        self.entries.read().unwrap().get(fingerprint).cloned()
    }

    /// Insert an entry, appending it to the backing file when present.
    pub fn insert(&self, entry: CacheEntry) -> Result<(), LlmError> {
        if let Some(writer) = &self.writer {
            let line = serde_json::to_string(&entry).map_err(|e| LlmError::Cache(e.to_string()))?;
            let mut file = writer.lock().unwrap();
            writeln!(file, "{line}").map_err(|e| LlmError::Cache(e.to_string()))?;
            file.flush().map_err(|e| LlmError::Cache(e.to_string()))?;
        }
        self.entries
            .write()
            .unwrap()
            .insert(entry.fingerprint.clone(), entry);
        Ok(())
    }

    /// All recorded prompts, for audit tests.
    pub fn prompts(&self) -> Vec<String> {
        self.entries
            .read()
            .unwrap()
            .values()
            .map(|e| e.prompt.clone())
            .collect()
    }
}
