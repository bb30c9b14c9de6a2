//! Content-addressed response cache: one file per request digest, file name
//! is the digest, content is the serialized response. Writes go through a
//! temp file and an atomic rename so concurrent writers never expose a
//! partial entry.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

use super::types::ChatResponse;

pub struct ResponseCache {
    dir: PathBuf,
    temp_counter: AtomicU64,
}

impl ResponseCache {
    pub fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(ResponseCache {
            dir: dir.to_path_buf(),
            temp_counter: AtomicU64::new(0),
        })
    }

    /// Look up a digest. A hit comes back with `cache_hit` set. Unreadable
    /// entries count as misses rather than failures.
    pub fn get(&self, digest: &str) -> Option<ChatResponse> {
        let content = fs::read_to_string(self.dir.join(digest)).ok()?;
        let mut response: ChatResponse = serde_json::from_str(&content).ok()?;
        response.cache_hit = true;
        Some(response)
    }

    pub fn put(&self, digest: &str, response: &ChatResponse) -> Result<()> {
        let mut stored = response.clone();
        stored.cache_hit = false;
        let payload = serde_json::to_string(&stored).expect("response serializes");
        let temp = self.dir.join(format!(
            ".tmp-{}-{}",
            std::process::id(),
            self.temp_counter.fetch_add(1, Ordering::Relaxed)
        ));
        fs::write(&temp, payload).map_err(|e| Error::io(&temp, e))?;
        let target = self.dir.join(digest);
        fs::rename(&temp, &target).map_err(|e| Error::io(&target, e))
    }
}
