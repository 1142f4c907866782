//! File-backed completion cache.
//!
//! One JSON document per key, written via temp-file-then-rename so concurrent
//! writers stay safe. Keys are content hashes over backend id, template name
//! and version, the rendered prompt and the temperature.

use std::fs;
use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashutil::sha256_hex;

#[derive(Debug, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub backend_id: String,
    pub template: String,
    pub template_version: String,
    pub temperature: f64,
    pub text: String,
    pub created_at: u64,
}

pub fn cache_key(
    backend_id: &str,
    template: &str,
    template_version: &str,
    prompt: &str,
    temperature: f64,
) -> String {
    sha256_hex(&[
        backend_id.as_bytes(),
        template.as_bytes(),
        template_version.as_bytes(),
        prompt.as_bytes(),
        temperature.to_bits().to_le_bytes().as_slice(),
    ])
}

#[derive(Debug, Clone)]
pub struct PromptCache {
    dir: PathBuf,
}

impl PromptCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self { dir })
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    /// Cached completion text, or None on miss. Corrupt entries are treated
    /// as misses.
    pub fn get(&self, key: &str) -> Option<String> {
        let path = self.path_for(key);
        let raw = fs::read_to_string(&path).ok()?;
        match serde_json::from_str::<CacheEntry>(&raw) {
            Ok(entry) => Some(entry.text),
            Err(e) => {
                log::warn!("ignoring corrupt cache entry {}: {e}", path.display());
                None
            }
        }
    }

    pub fn put(&self, entry: &CacheEntry) -> Result<()> {
        let path = self.path_for(&entry.key);
        let tmp = self.dir.join(format!(".{}.tmp", entry.key));
        let body = serde_json::to_string_pretty(entry).expect("cache entry serializes");
        fs::write(&tmp, body).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        Ok(())
    }
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}
