use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use sha2::{Digest, Sha256};

use super::{EmbeddingError, EmbeddingVector};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub provider_id: String,
    pub model_id: String,
    /// sha-256 of the normalized text, hex encoded.
    pub content_hash: String,
}

/// Embedding cache for one provider/model pair.
///
/// Reads are concurrent; inserts take the write lock. When backed by a file,
/// every new entry is appended as `content_hash<TAB>hex(f32 little-endian)`.
/// Nothing is ever evicted.
#[derive(Debug)]
pub struct EmbeddingCache {
    provider_id: String,
    model_id: String,
    entries: RwLock<HashMap<String, EmbeddingVector>>,
    file: Option<(PathBuf, Mutex<File>)>,
}

impl EmbeddingCache {
    pub fn in_memory(provider_id: &str, model_id: &str) -> Self {
        EmbeddingCache {
            provider_id: provider_id.to_string(),
            model_id: model_id.to_string(),
            entries: RwLock::new(HashMap::new()),
            file: None,
        }
    }

    pub fn open(dir: &Path, provider_id: &str, model_id: &str) -> Result<Self, EmbeddingError> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(Self::file_name(provider_id, model_id));
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            for line in reader.lines() {
                let line = line?;
                // Half-written trailing lines are skipped.
                let Some((hash, hex_bytes)) = line.split_once('\t') else {
                    continue;
                };
                let Ok(bytes) = hex::decode(hex_bytes.trim()) else {
                    continue;
                };
                if bytes.is_empty() || bytes.len() % 4 != 0 {
                    continue;
                }
                let values = bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect();
                entries.insert(hash.to_string(), EmbeddingVector::from_unit(values));
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(EmbeddingCache {
            provider_id: provider_id.to_string(),
            model_id: model_id.to_string(),
            entries: RwLock::new(entries),
            file: Some((path, Mutex::new(file))),
        })
    }

    fn file_name(provider_id: &str, model_id: &str) -> String {
        let clean = |s: &str| -> String {
            s.chars()
                .map(|c| {
                    if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                        c
                    } else {
                        '_'
                    }
                })
                .collect()
        };
        format!("{}--{}.tsv", clean(provider_id), clean(model_id))
    }

    pub fn path(&self) -> Option<&Path> {
        self.file.as_ref().map(|(p, _)| p.as_path())
    }

    pub fn key(&self, normalized_text: &str) -> CacheKey {
        CacheKey {
            provider_id: self.provider_id.clone(),
            model_id: self.model_id.clone(),
            content_hash: hex::encode(Sha256::digest(normalized_text.as_bytes())),
        }
    }

    pub fn get(&self, key: &CacheKey) -> Option<EmbeddingVector> {
        if key.provider_id != self.provider_id || key.model_id != self.model_id {
            return None;
        }
        self.entries
            .read()
            .expect("cache lock poisoned")
            .get(&key.content_hash)
            .cloned()
    }

    pub fn insert(&self, key: CacheKey, vector: EmbeddingVector) -> Result<(), EmbeddingError> {
        let mut entries = self.entries.write().expect("cache lock poisoned");
        if entries.contains_key(&key.content_hash) {
            return Ok(());
        }
        if let Some((_, file)) = &self.file {
            let bytes: Vec<u8> = vector
                .values()
                .iter()
                .flat_map(|v| v.to_le_bytes())
                .collect();
            let mut f = file.lock().expect("cache file lock poisoned");
            writeln!(f, "{}\t{}", key.content_hash, hex::encode(bytes))?;
        }
        entries.insert(key.content_hash, vector);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{Embedder, HashProvider, ProviderConfig};

    #[test]
    fn equal_texts_share_key() {
        let c = EmbeddingCache::in_memory("p", "m");
        assert_eq!(c.key("voice call"), c.key("voice call"));
        assert_ne!(c.key("voice call"), c.key("voice calls"));
        let other = EmbeddingCache::in_memory("p", "m2");
        assert_ne!(c.key("x"), other.key("x"));
    }

    #[test]
    fn disk_cache_round_trips_exact_bits() {
        let dir = tempfile::tempdir().unwrap();
        let v = HashProvider::new(32).embed_one("online charging").unwrap();
        {
            let c = EmbeddingCache::open(dir.path(), "deterministic-hash", "char3").unwrap();
            c.insert(c.key("online charging"), v.clone()).unwrap();
        }
        let path = dir.path().join("deterministic-hash--char3.tsv");
        let mut text = std::fs::read_to_string(&path).unwrap();
        let line = text.lines().next().unwrap().to_string();
        assert_eq!(line.split('\t').count(), 2);
        // A torn trailing write must not poison the cache.
        text.push_str("deadbeef\t00ff0");
        std::fs::write(&path, text).unwrap();

        let c = EmbeddingCache::open(dir.path(), "deterministic-hash", "char3").unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.get(&c.key("online charging")).unwrap(), v);
    }

    #[test]
    fn embedder_uses_disk_cache() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ProviderConfig::deterministic(16);
        let e = Embedder::new(cfg.clone())
            .unwrap()
            .with_cache_dir(dir.path())
            .unwrap();
        let first = e.embed_texts(&["A b", "c"]).unwrap();
        assert_eq!(e.cache().len(), 2);
        let e2 = Embedder::new(cfg)
            .unwrap()
            .with_cache_dir(dir.path())
            .unwrap();
        assert_eq!(e2.cache().len(), 2);
        assert_eq!(e2.embed_texts(&["a  B", "C"]).unwrap(), first);
    }
}
