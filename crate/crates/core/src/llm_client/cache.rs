//! Append-only response cache. One JSON record per line:
//! `{fingerprint, request, response, timestamp}`. Interrupted runs resume from
//! whatever was flushed; a truncated trailing line is skipped on load.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub fingerprint: String,
    pub request: Value,
    pub response: Value,
    pub timestamp: String,
}

#[derive(Debug, Default)]
pub struct ResponseCache {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<String, Value>>,
    // single writer for the backing file
    writer: Mutex<Option<File>>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (creating if needed) a cache file and loads its records.
    pub fn open(path: &Path) -> io::Result<Self> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (idx, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheRecord>(&line) {
                    Ok(rec) => {
                        entries.entry(rec.fingerprint).or_insert(rec.response);
                    }
                    Err(e) => log::warn!(
                        "{}: ignoring unreadable cache line {}: {e}",
                        path.display(),
                        idx + 1
                    ),
                }
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(path)?;
        let existing = fs::read(path)?;
        if existing.last().is_some_and(|&b| b != b'\n') {
            file.write_all(b"\n")?;
        }
        Ok(Self {
            path: Some(path.to_path_buf()),
            entries: RwLock::new(entries),
            writer: Mutex::new(Some(file)),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, fingerprint: &str) -> Option<Value> {
        self.entries.read().unwrap().get(fingerprint).cloned()
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stores a response; the first record for a fingerprint wins.
    pub fn insert(&self, fingerprint: &str, request: Value, response: Value) -> io::Result<()> {
        let mut writer = self.writer.lock().unwrap();
        {
            let mut entries = self.entries.write().unwrap();
            if entries.contains_key(fingerprint) {
                return Ok(());
            }
            entries.insert(fingerprint.to_string(), response.clone());
        }
        if let Some(file) = writer.as_mut() {
            let rec = CacheRecord {
                fingerprint: fingerprint.to_string(),
                request,
                response,
                timestamp: chrono::Utc::now().to_rfc3339(),
            };
            let mut line = serde_json::to_vec(&rec).map_err(io::Error::other)?;
            line.push(b'\n');
            file.write_all(&line)?;
            file.flush()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn persists_and_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        {
            let cache = ResponseCache::open(&path).unwrap();
            cache.insert("fp1", json!({"a": 1}), json!("hello")).unwrap();
            cache.insert("fp1", json!({"a": 1}), json!("ignored")).unwrap();
            cache.insert("fp2", json!({"a": 2}), json!([0.5, 0.5])).unwrap();
        }
        // simulate an interrupted append
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"fingerprint\":\"fp3\",\"req").unwrap();
        drop(f);

        let cache = ResponseCache::open(&path).unwrap();
        assert_eq!(cache.len(), 2);
        assert_eq!(cache.get("fp1"), Some(json!("hello")));
        assert_eq!(cache.get("fp2"), Some(json!([0.5, 0.5])));
        assert_eq!(cache.get("fp3"), None);
        cache.insert("fp4", json!({}), json!("after")).unwrap();
        drop(cache);
        assert_eq!(ResponseCache::open(&path).unwrap().get("fp4"), Some(json!("after")));
    }
}
