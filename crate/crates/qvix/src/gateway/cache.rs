//! Content-addressed response cache with single-flight semantics: identical
//! in-flight requests collapse to one upstream call, and completed responses
//! are reused from memory or disk.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use crate::error::Result;

pub struct ResponseCache {
    dir: Option<PathBuf>,
    mem: Mutex<HashMap<String, String>>,
    // Per-key locks so concurrent misses on the same key execute the
    // underlying call exactly once while other keys proceed unblocked.
    key_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self {
            dir: None,
            mem: Mutex::new(HashMap::new()),
            key_locks: Mutex::new(HashMap::new()),
        }
    }

    /// Cache backed by one file per key under `dir` (created if missing),
    /// so re-runs of the same run id reuse completed work.
    pub fn at_dir(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self {
            dir: Some(dir),
            mem: Mutex::new(HashMap::new()),
            key_locks: Mutex::new(HashMap::new()),
        })
    }

    pub fn lookup(&self, key: &str) -> Option<String> {
        if let Some(hit) = self.mem.lock().unwrap().get(key) {
            return Some(hit.clone());
        }
        let path = self.dir.as_ref()?.join(format!("{key}.txt"));
        let text = std::fs::read_to_string(path).ok()?;
        self.mem.lock().unwrap().insert(key.to_string(), text.clone());
        Some(text)
    }

    fn store(&self, key: &str, value: &str) -> Result<()> {
        if let Some(dir) = &self.dir {
            // Write-then-rename so readers never observe a partial file.
            let tmp = dir.join(format!("{key}.tmp.{}", std::process::id()));
            std::fs::write(&tmp, value)?;
            std::fs::rename(&tmp, dir.join(format!("{key}.txt")))?;
        }
        self.mem
            .lock()
            .unwrap()
            .insert(key.to_string(), value.to_string());
        Ok(())
    }

    fn lock_for(&self, key: &str) -> Arc<Mutex<()>> {
        Arc::clone(
            self.key_locks
                .lock()
                .unwrap()
                .entry(key.to_string())
                .or_default(),
        )
    }

    /// Return the cached value for `key`, or run `compute` (once, even under
    /// concurrent callers) and cache its output. Errors are not cached.
    pub fn get_or_compute(
        &self,
        key: &str,
        compute: impl FnOnce() -> Result<String>,
    ) -> Result<String> {
        if let Some(hit) = self.lookup(key) {
            return Ok(hit);
        }
        let key_lock = self.lock_for(key);
        let _held = key_lock.lock().unwrap();
        // A concurrent holder may have filled the cache while we waited.
        if let Some(hit) = self.lookup(key) {
            return Ok(hit);
        }
        let value = compute()?;
        self.store(key, &value)?;
        Ok(value)
    }
}
