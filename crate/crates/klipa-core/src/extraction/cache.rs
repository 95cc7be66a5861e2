use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ExtractionError;

pub const CACHE_FILE: &str = "extraction_cache.jsonl";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    key: String,
    reply: String,
}

/// Content-addressed store of raw model replies. Backed by an append-only
/// JSON-lines file when a directory is given, memory-only otherwise.
#[derive(Debug, Default)]
pub struct ExtractionCache {
    inner: Mutex<Inner>,
    corrupt: Vec<ExtractionError>,
}

#[derive(Debug, Default)]
struct Inner {
    map: HashMap<String, String>,
    file: Option<File>,
    path: Option<PathBuf>,
}

/// `sha256(chunk text ∥ prompt ∥ schema fingerprint ∥ model)`, hex.
pub fn cache_key(chunk_text: &str, prompt: &str, fingerprint: &str, model: &str) -> String {
    let mut h = Sha256::new();
    for part in [chunk_text, prompt, fingerprint, model] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    hex::encode(h.finalize())
}

impl ExtractionCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Open or create `<dir>/extraction_cache.jsonl`. Unreadable lines are
    /// skipped and reported through [`ExtractionCache::corrupt_entries`];
    /// their keys will be recomputed.
    pub fn open(dir: &Path) -> Result<Self, ExtractionError> {
        std::fs::create_dir_all(dir).map_err(|e| ExtractionError::Io(format!("{}: {e}", dir.display())))?;
        let path = dir.join(CACHE_FILE);
        let mut map = HashMap::new();
        let mut corrupt = Vec::new();
        if path.exists() {
            let f = File::open(&path).map_err(|e| ExtractionError::Io(format!("{}: {e}", path.display())))?;
            for (i, line) in BufReader::new(f).lines().enumerate() {
                let parsed = line
                    .map_err(|e| e.to_string())
                    .and_then(|l| serde_json::from_str::<Entry>(&l).map_err(|e| e.to_string()));
                match parsed {
                    Ok(entry) => {
                        map.insert(entry.key, entry.reply);
                    }
                    Err(message) => {
                        let err = ExtractionError::CacheCorrupt { line: i + 1, message };
                        log::warn!("{err}");
                        corrupt.push(err);
                    }
                }
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| ExtractionError::Io(format!("{}: {e}", path.display())))?;
        Ok(Self {
            inner: Mutex::new(Inner {
                map,
                file: Some(file),
                path: Some(path),
            }),
            corrupt,
        })
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.inner.lock().unwrap().map.get(key).cloned()
    }

    pub fn put(&self, key: &str, reply: &str) -> Result<(), ExtractionError> {
        let mut inner = self.inner.lock().unwrap();
        if inner.map.contains_key(key) {
            return Ok(());
        }
        inner.map.insert(key.to_string(), reply.to_string());
        let path = inner.path.clone();
        if let Some(f) = inner.file.as_mut() {
            let line = serde_json::to_string(&Entry {
                key: key.to_string(),
                reply: reply.to_string(),
            })
            .expect("entry serializes");
            writeln!(f, "{line}").map_err(|e| {
                ExtractionError::Io(format!("{}: {e}", path.as_deref().unwrap_or(Path::new("?")).display()))
            })?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn corrupt_entries(&self) -> &[ExtractionError] {
        &self.corrupt
    }
}
