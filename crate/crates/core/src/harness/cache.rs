//! Content-addressed store of runner outcomes.
//!
//! Layout under the cache directory:
//!
//! ```text
//! index.jsonl                 one {"key","path"} line per stored entry
//! entries/<k[0..2]>/<k>.json  {"key","outcome","checksum"}
//! ```
//!
//! Lookups go straight to the entry path derived from the key. An entry that
//! fails to parse or whose checksum or key does not match is dropped and
//! treated as a miss; other entries are unaffected.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Outcome;

const KEY_DOMAIN: &[u8] = b"kernelcur-cache-v1\0";

/// Cache key over the two programs and the run configuration hash.
pub fn cache_key(task_source: &str, kernel_source: &str, config_hash: &str) -> String {
    let mut h = Sha256::new();
    h.update(KEY_DOMAIN);
    for part in [task_source, kernel_source, config_hash] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Serialize, Deserialize)]
struct Entry {
    key: String,
    outcome: Outcome,
    checksum: String,
}

fn checksum(outcome: &Outcome) -> String {
    let json = serde_json::to_string(outcome).expect("outcome serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

#[derive(Debug, Default)]
pub struct ResultCache {
    dir: Option<PathBuf>,
    memory: HashMap<String, Outcome>,
    corrupt_dropped: usize,
}

impl ResultCache {
    pub fn in_memory() -> Self {
        ResultCache::default()
    }

    /// Opens (creating if needed) a persistent cache rooted at `dir`.
    pub fn open(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(dir.join("entries"))?;
        Ok(ResultCache {
            dir: Some(dir),
            ..Default::default()
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    /// Entries discarded as corrupt since the cache was opened.
    pub fn corrupt_dropped(&self) -> usize {
        self.corrupt_dropped
    }

    fn entry_path(dir: &Path, key: &str) -> PathBuf {
        let shard = key.get(..2).unwrap_or("xx");
        dir.join("entries").join(shard).join(format!("{key}.json"))
    }

    pub fn get(&mut self, key: &str) -> Option<Outcome> {
        if let Some(hit) = self.memory.get(key) {
            return Some(hit.clone());
        }
        let dir = self.dir.as_ref()?;
        let path = Self::entry_path(dir, key);
        let bytes = fs::read(&path).ok()?;
        let valid = serde_json::from_slice::<Entry>(&bytes)
            .ok()
            .filter(|e| e.key == key && e.checksum == checksum(&e.outcome));
        match valid {
            Some(entry) => {
                self.memory.insert(key.to_string(), entry.outcome.clone());
                Some(entry.outcome)
            }
            None => {
                log::warn!("dropping corrupt cache entry {}", path.display());
                let _ = fs::remove_file(&path);
                self.corrupt_dropped += 1;
                None
            }
        }
    }

    pub fn put(&mut self, key: &str, outcome: &Outcome) -> io::Result<()> {
        self.memory.insert(key.to_string(), outcome.clone());
        let Some(dir) = &self.dir else {
            return Ok(());
        };
        let path = Self::entry_path(dir, key);
        fs::create_dir_all(path.parent().expect("entry path has a parent"))?;
        let entry = Entry {
            key: key.to_string(),
            outcome: outcome.clone(),
            checksum: checksum(outcome),
        };
        crate::write_atomic(&path, serde_json::to_string(&entry)?.as_bytes())?;
        let rel = path.strip_prefix(dir).unwrap_or(&path);
        let line = serde_json::json!({ "key": key, "path": rel.to_string_lossy() });
        let mut index = OpenOptions::new().create(true).append(true).open(dir.join("index.jsonl"))?;
        writeln!(index, "{line}")?;
        Ok(())
    }
}
