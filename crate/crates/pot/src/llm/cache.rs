//! Append-only response cache keyed by [`cache_key`](super::cache_key).

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{cache_key, Backend, CompletionRequest, CompletionResult, LlmError};

#[derive(Serialize, Deserialize)]
struct CacheRecord {
    key: String,
    text: String,
}

/// Key-to-text response store, optionally persisted as JSONL.
///
/// The on-disk format is one `{"key": ..., "text": ...}` object per line,
/// appended on every fresh completion and flushed immediately, so a killed
/// run loses at most the response in flight.
#[derive(Debug)]
pub struct ResponseCache {
    entries: Mutex<HashMap<String, String>>,
    writer: Option<Mutex<BufWriter<File>>>,
    path: Option<PathBuf>,
}

impl ResponseCache {
    /// Volatile cache with no backing file.
    pub fn in_memory() -> Self {
        ResponseCache {
            entries: Mutex::new(HashMap::new()),
            writer: None,
            path: None,
        }
    }

    /// Opens (or creates) a persistent cache file, loading existing entries.
    pub fn open(path: &Path) -> Result<Self, LlmError> {
        let wrap = |source: std::io::Error| LlmError::CacheIo {
            path: path.display().to_string(),
            source,
        };
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(wrap)?;
            }
        }
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path).map_err(wrap)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line.map_err(wrap)?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: CacheRecord =
                    serde_json::from_str(&line).map_err(|_| LlmError::MalformedCache {
                        path: path.display().to_string(),
                        line: i + 1,
                    })?;
                // later lines win, matching append order
                entries.insert(record.key, record.text);
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(wrap)?;
        Ok(ResponseCache {
            entries: Mutex::new(entries),
            writer: Some(Mutex::new(BufWriter::new(file))),
            path: Some(path.to_path_buf()),
        })
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.entries.lock().unwrap().get(key).cloned()
    }

    pub fn put(&self, key: &str, text: &str) -> Result<(), LlmError> {
        let inserted = self
            .entries
            .lock()
            .unwrap()
            .insert(key.to_string(), text.to_string())
            .is_none();
        if inserted {
            if let Some(writer) = &self.writer {
                let record = CacheRecord {
                    key: key.to_string(),
                    text: text.to_string(),
                };
                let line = serde_json::to_string(&record).expect("cache record serializes");
                let mut writer = writer.lock().unwrap();
                let wrap = |source: std::io::Error| LlmError::CacheIo {
                    path: self
                        .path
                        .as_ref()
                        .map(|p| p.display().to_string())
                        .unwrap_or_default(),
                    source,
                };
                writer.write_all(line.as_bytes()).map_err(wrap)?;
                writer.write_all(b"\n").map_err(wrap)?;
                writer.flush().map_err(wrap)?;
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Serves completions from a [`ResponseCache`], delegating misses to the
/// inner backend and persisting what comes back.
pub struct CachedBackend<B> {
    inner: B,
    cache: ResponseCache,
    misses: AtomicUsize,
}

impl<B: Backend> CachedBackend<B> {
    pub fn new(inner: B, cache: ResponseCache) -> Self {
        CachedBackend {
            inner,
            cache,
            misses: AtomicUsize::new(0),
        }
    }

    /// Requests that reached the inner backend (i.e. cache misses).
    pub fn live_calls(&self) -> usize {
        self.misses.load(Ordering::SeqCst)
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }
}

impl<B: Backend> Backend for CachedBackend<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, LlmError> {
        let key = cache_key(request);
        if let Some(text) = self.cache.get(&key) {
            return Ok(CompletionResult {
                text,
                cached: true,
                attempts: 1,
            });
        }
        self.misses.fetch_add(1, Ordering::SeqCst);
        let result = self.inner.complete(request)?;
        if !result.text.is_empty() {
            self.cache.put(&key, &result.text)?;
        }
        Ok(result)
    }
}
