use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{fingerprint, Backend, ChatRequest, GatewayError};

/// One line of the response cache file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub fp: String,
    pub responses: Vec<String>,
}

pub fn parse_cache_line(line: &str) -> Result<CacheEntry, GatewayError> {
    let entry: CacheEntry =
        serde_json::from_str(line).map_err(|e| GatewayError::Cache(format!("bad cache line: {e}")))?;
    if entry.fp.is_empty() {
        return Err(GatewayError::Cache("empty fingerprint".into()));
    }
    Ok(entry)
}

/// Content-addressed chat cache (fingerprint -> responses) persisted as JSONL.
/// Embeddings pass through uncached.
pub struct CachedBackend {
    inner: Arc<dyn Backend>,
    path: PathBuf,
    entries: Mutex<HashMap<String, Vec<String>>>,
    writer: Mutex<File>,
}

impl CachedBackend {
    /// Opens (or creates) the cache file. Malformed lines are skipped with a
    /// warning; the last entry for a fingerprint wins.
    pub fn open(inner: Arc<dyn Backend>, path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let path = path.as_ref().to_path_buf();
        let io = |e: std::io::Error| GatewayError::Cache(format!("{}: {e}", path.display()));
        let mut entries = HashMap::new();
        if path.exists() {
            let text = std::fs::read_to_string(&path).map_err(io)?;
            for (n, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match parse_cache_line(line) {
                    Ok(entry) => {
                        entries.insert(entry.fp, entry.responses);
                    }
                    Err(e) => tracing::warn!(line = n + 1, "skipping cache line: {e}"),
                }
            }
        }
        let writer = OpenOptions::new().create(true).append(true).open(&path).map_err(io)?;
        Ok(CachedBackend {
            inner,
            path,
            entries: Mutex::new(entries),
            writer: Mutex::new(writer),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Backend for CachedBackend {
    fn complete(&self, request: &ChatRequest) -> Result<Vec<String>, GatewayError> {
        let fp = fingerprint(request);
        if let Some(hit) = self.entries.lock().expect("cache poisoned").get(&fp) {
            return Ok(hit.clone());
        }
        let responses = self.inner.complete(request)?;
        let entry = CacheEntry { fp: fp.clone(), responses: responses.clone() };
        let line = serde_json::to_string(&entry).expect("cache entry serializes");
        {
            let mut writer = self.writer.lock().expect("cache writer poisoned");
            writeln!(writer, "{line}").map_err(|e| GatewayError::Cache(e.to_string()))?;
            writer.flush().map_err(|e| GatewayError::Cache(e.to_string()))?;
        }
        self.entries.lock().expect("cache poisoned").insert(fp, responses.clone());
        Ok(responses)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        self.inner.embed(texts)
    }
}
