//! Content-addressed reply cache: one JSON file per key.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Hash of the image bytes, the pool's feature names in order and the model id.
pub fn cache_key(image_png: &[u8], pool_names: &[&str], model: &str) -> String {
    let mut h = Sha256::new();
    h.update((image_png.len() as u64).to_le_bytes());
    h.update(image_png);
    for n in pool_names {
        h.update((n.len() as u64).to_le_bytes());
        h.update(n.as_bytes());
    }
    h.update([0xff]);
    h.update(model.as_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub model: String,
    pub reply: String,
}

const STRIPES: usize = 16;

pub struct ReplyCache {
    dir: PathBuf,
    locks: Vec<Mutex<()>>,
}

impl ReplyCache {
    pub fn open(dir: &Path) -> std::io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), locks: (0..STRIPES).map(|_| Mutex::new(())).collect() })
    }

    pub fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    fn stripe(&self, key: &str) -> &Mutex<()> {
        let b = u8::from_str_radix(key.get(..2).unwrap_or("00"), 16).unwrap_or(0);
        &self.locks[b as usize % STRIPES]
    }

    /// Unreadable or mismatched entries count as misses.
    pub fn get(&self, key: &str) -> Option<CacheEntry> {
        let text = fs::read_to_string(self.path(key)).ok()?;
        let e: CacheEntry = serde_json::from_str(&text).ok()?;
        (e.key == key).then_some(e)
    }

    /// Writes through a temporary file and a rename so readers never see a partial entry.
    pub fn put(&self, entry: &CacheEntry) -> std::io::Result<()> {
        let _g = self.stripe(&entry.key).lock().unwrap_or_else(|p| p.into_inner());
        let tmp = self.dir.join(format!(".{}.tmp", entry.key));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(serde_json::to_string_pretty(entry)?.as_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, self.path(&entry.key))
    }
}
