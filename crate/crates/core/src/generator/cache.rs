//! Content-addressed response cache.
//!
//! Layout: `<dir>/<first two hex chars>/<digest>.txt` holds the raw response and
//! `<digest>.meta.json` the provenance sidecar. The sidecar is written first and
//! the response file last, each through a temp file and rename, so a response
//! file on disk always has complete metadata. Entries are write-once.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::jsonl::write_atomic;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheMeta {
    pub digest: String,
    pub provider_id: String,
    pub model_id: String,
    pub prompt: String,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CachedResponse {
    pub meta: CacheMeta,
    pub text: String,
}

#[derive(Debug, thiserror::Error)]
pub enum CacheError {
    #[error("cache i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt cache metadata at {path}: {source}")]
    Corrupt {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

/// Response cache, in memory and optionally mirrored to a directory.
#[derive(Debug, Default)]
pub struct ResponseCache {
    dir: Option<PathBuf>,
    entries: RwLock<HashMap<String, CachedResponse>>,
    inflight: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> Result<Self, CacheError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|source| CacheError::Io { path: dir.clone(), source })?;
        Ok(Self { dir: Some(dir), ..Self::default() })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn paths(dir: &Path, digest: &str) -> (PathBuf, PathBuf) {
        let shard = dir.join(&digest[..2.min(digest.len())]);
        (shard.join(format!("{digest}.txt")), shard.join(format!("{digest}.meta.json")))
    }

    pub fn get(&self, digest: &str) -> Result<Option<CachedResponse>, CacheError> {
        if let Some(hit) = self.entries.read().expect("cache lock").get(digest) {
            return Ok(Some(hit.clone()));
        }
        let Some(dir) = &self.dir else { return Ok(None) };
        let (text_path, meta_path) = Self::paths(dir, digest);
        let text = match std::fs::read_to_string(&text_path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(source) => return Err(CacheError::Io { path: text_path, source }),
        };
        let raw_meta = std::fs::read(&meta_path).map_err(|source| CacheError::Io { path: meta_path.clone(), source })?;
        let meta: CacheMeta = serde_json::from_slice(&raw_meta).map_err(|source| CacheError::Corrupt { path: meta_path, source })?;
        let entry = CachedResponse { meta, text };
        self.entries.write().expect("cache lock").insert(digest.to_string(), entry.clone());
        Ok(Some(entry))
    }

    /// Stores `entry` unless the digest is already present, in which case the
    /// existing entry wins and is returned.
    pub fn put(&self, entry: CachedResponse) -> Result<CachedResponse, CacheError> {
        if let Some(existing) = self.get(&entry.meta.digest)? {
            return Ok(existing);
        }
        if let Some(dir) = &self.dir {
            let (text_path, meta_path) = Self::paths(dir, &entry.meta.digest);
            let meta = serde_json::to_vec_pretty(&entry.meta).expect("meta serializes");
            write_atomic(&meta_path, &meta).map_err(|source| CacheError::Io { path: meta_path, source })?;
            write_atomic(&text_path, entry.text.as_bytes()).map_err(|source| CacheError::Io { path: text_path, source })?;
        }
        self.entries.write().expect("cache lock").insert(entry.meta.digest.clone(), entry.clone());
        Ok(entry)
    }

    /// Returns the cached entry for `digest`, or runs `fetch` and stores its
    /// result. Concurrent callers for the same digest are serialized so that
    /// `fetch` runs at most once per digest. The flag is `true` on a hit.
    pub fn get_or_fetch<E>(
        &self,
        digest: &str,
        fetch: impl FnOnce() -> Result<CachedResponse, E>,
    ) -> Result<(CachedResponse, bool), E>
    where
        E: From<CacheError>,
    {
        let slot = {
            let mut inflight = self.inflight.lock().expect("inflight lock");
            inflight.entry(digest.to_string()).or_default().clone()
        };
        let _guard = slot.lock().expect("slot lock");
        if let Some(hit) = self.get(digest)? {
            return Ok((hit, true));
        }
        let fresh = fetch()?;
        Ok((self.put(fresh)?, false))
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
