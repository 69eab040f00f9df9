use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use crate::canonical::sha256_hex;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheEntry {
    pub key: String,
    pub response_text: String,
    pub created_at: String,
}

/// SHA-256 over template name, rendered prompt, model id and the sorted
/// attachment URIs, each field NUL-terminated.
pub fn cache_key(
    template_name: &str,
    prompt: &str,
    model_id: &str,
    attachments: &[String],
) -> String {
    let mut sorted: Vec<&str> = attachments.iter().map(String::as_str).collect();
    sorted.sort_unstable();
    let mut material = String::new();
    for field in [template_name, prompt, model_id].into_iter().chain(sorted) {
        material.push_str(field);
        material.push('\0');
    }
    sha256_hex(material.as_bytes())
}

/// Append-only response cache. Concurrent readers, serialized appends.
/// Entries already present are never overwritten.
pub struct ResponseCache {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<String, CacheEntry>>,
    writer: Mutex<Option<File>>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            entries: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
        }
    }

    /// Opens (creating if absent) a line-delimited cache file.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut entries = HashMap::new();
        let mut needs_newline = false;
        if path.exists() {
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let mut offset = 0u64;
            for line in text.split_inclusive('\n') {
                let content = line.trim_end_matches(['\n', '\r']);
                if !content.trim().is_empty() {
                    let entry: CacheEntry =
                        serde_json::from_str(content).map_err(|e| Error::CacheCorrupt {
                            path: path.clone(),
                            offset,
                            message: e.to_string(),
                        })?;
                    entries.entry(entry.key.clone()).or_insert(entry);
                }
                offset += line.len() as u64;
            }
            needs_newline = !text.is_empty() && !text.ends_with('\n');
        } else if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let mut file = file;
        if needs_newline {
            file.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
        }
        Ok(Self {
            path: Some(path),
            entries: RwLock::new(entries),
            writer: Mutex::new(Some(file)),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.entries
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(key)
            .map(|e| e.response_text.clone())
    }

    pub fn put(&self, entry: CacheEntry) -> Result<()> {
        let mut writer = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        {
            let mut entries = self.entries.write().unwrap_or_else(|e| e.into_inner());
            if entries.contains_key(&entry.key) {
                return Ok(());
            }
            entries.insert(entry.key.clone(), entry.clone());
        }
        if let (Some(file), Some(path)) = (writer.as_mut(), self.path.as_ref()) {
            let mut line = serde_json::to_string(&entry).expect("cache entry serializes");
            line.push('\n');
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(key: &str, text: &str) -> CacheEntry {
        CacheEntry {
            key: key.into(),
            response_text: text.into(),
            created_at: "2026-01-01T00:00:00Z".into(),
        }
    }

    #[test]
    fn keys_distinguish_every_field() {
        let base = cache_key("t", "p", "m", &[]);
        assert_ne!(base, cache_key("t2", "p", "m", &[]));
        assert_ne!(base, cache_key("t", "p2", "m", &[]));
        assert_ne!(base, cache_key("t", "p", "m2", &[]));
        assert_ne!(base, cache_key("t", "p", "m", &["v".into()]));
        // field boundaries matter
        assert_ne!(
            cache_key("ab", "c", "m", &[]),
            cache_key("a", "bc", "m", &[])
        );
        assert_eq!(
            cache_key("t", "p", "m", &["b".into(), "a".into()]),
            cache_key("t", "p", "m", &["a".into(), "b".into()])
        );
    }

    #[test]
    fn persists_and_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        {
            let cache = ResponseCache::open(&path).unwrap();
            cache.put(entry("k1", "one")).unwrap();
            cache.put(entry("k1", "ignored")).unwrap();
            cache.put(entry("k2", "two")).unwrap();
        }
        let cache = ResponseCache::open(&path).unwrap();
        assert_eq!(cache.len(), 2);
        assert_eq!(cache.get("k1").as_deref(), Some("one"));
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 2);
    }

    #[test]
    fn corruption_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let good = serde_json::to_string(&entry("k", "v")).unwrap() + "\n";
        std::fs::write(&path, format!("{good}{{garbage\n")).unwrap();
        match ResponseCache::open(&path) {
            Err(Error::CacheCorrupt { offset, .. }) => assert_eq!(offset, good.len() as u64),
            other => panic!("expected corruption error, got {:?}", other.err()),
        }
    }
}
