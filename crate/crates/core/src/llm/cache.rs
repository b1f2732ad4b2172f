use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write as _};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ChatBackend, Completion, CompletionRequest, FinishReason, LlmError};

pub const CACHE_FILE: &str = "completions.jsonl";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Entry {
    key: String,
    model: String,
    digest: String,
    #[serde(default)]
    prefix: Option<String>,
    text: String,
    finish_reason: FinishReason,
}

/// Successful completions keyed by model name, prompt digest and prefix.
/// Optionally persisted as JSON lines in a directory.
#[derive(Debug, Default)]
pub struct CompletionCache {
    entries: Mutex<HashMap<String, Entry>>,
    file: Option<Mutex<File>>,
    path: Option<PathBuf>,
}

pub fn cache_key(model: &str, request: &CompletionRequest) -> String {
    let mut h = Sha256::new();
    h.update(model.as_bytes());
    h.update(b"\n");
    h.update(request.prompt.digest().as_bytes());
    h.update(b"\n");
    if let Some(prefix) = &request.assistant_prefix {
        h.update(b"prefix:");
        h.update(prefix.as_bytes());
    }
    hex::encode(h.finalize())
}

impl CompletionCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads `dir/completions.jsonl` and appends new entries to it.
    pub fn open(dir: &Path) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(CACHE_FILE);
        let mut entries = HashMap::new();
        if path.exists() {
            for line in BufReader::new(File::open(&path)?).lines() {
                let line = line?;
                match serde_json::from_str::<Entry>(&line) {
                    Ok(e) => {
                        entries.insert(e.key.clone(), e);
                    }
                    Err(e) if !line.trim().is_empty() => log::warn!("skipping cache line: {e}"),
                    Err(_) => {}
                }
            }
        }
        let file = std::fs::OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self { entries: Mutex::new(entries), file: Some(Mutex::new(file)), path: Some(path) })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn get(&self, key: &str) -> Option<Entry> {
        self.entries.lock().expect("cache lock").get(key).cloned()
    }

    fn put(&self, entry: Entry) {
        let mut entries = self.entries.lock().expect("cache lock");
        if entries.contains_key(&entry.key) {
            return;
        }
        if let Some(file) = &self.file {
            let line = serde_json::to_string(&entry).expect("entry serializes");
            if let Err(e) = writeln!(file.lock().expect("cache file lock"), "{line}") {
                log::warn!("cache write failed: {e}");
            }
        }
        entries.insert(entry.key.clone(), entry);
    }
}

/// Backend wrapper answering from the cache when it can.
pub struct CachedBackend<'a> {
    inner: &'a dyn ChatBackend,
    cache: &'a CompletionCache,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl<'a> CachedBackend<'a> {
    pub fn new(inner: &'a dyn ChatBackend, cache: &'a CompletionCache) -> Self {
        Self { inner, cache, hits: AtomicUsize::new(0), misses: AtomicUsize::new(0) }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    /// Requests forwarded to the wrapped backend.
    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::SeqCst)
    }
}

impl ChatBackend for CachedBackend<'_> {
    fn model_name(&self) -> &str {
        self.inner.model_name()
    }

    fn supports_assistant_prefix(&self) -> bool {
        self.inner.supports_assistant_prefix()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, LlmError> {
        let key = cache_key(self.inner.model_name(), request);
        if let Some(e) = self.cache.get(&key) {
            self.hits.fetch_add(1, Ordering::SeqCst);
            return Ok(Completion { text: e.text, finish_reason: e.finish_reason, attempts: 1 });
        }
        self.misses.fetch_add(1, Ordering::SeqCst);
        let completion = self.inner.complete(request)?;
        self.cache.put(Entry {
            key,
            model: self.inner.model_name().to_string(),
            digest: request.prompt.digest(),
            prefix: request.assistant_prefix.clone(),
            text: completion.text.clone(),
            finish_reason: completion.finish_reason,
        });
        Ok(completion)
    }
}
