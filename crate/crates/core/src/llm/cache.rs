use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ChatRequest, TemplateId};

/// Everything that can change a response. Its hash names the cache file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CacheKey {
    Chat {
        template_id: TemplateId,
        template_hash: String,
        bindings: BTreeMap<String, String>,
        rendered: String,
        temperature: f64,
        max_tokens: u32,
        sample_index: u32,
        provider: String,
        model: String,
    },
    Embedding {
        text: String,
        provider: String,
        model: String,
    },
}

impl CacheKey {
    pub fn chat(req: &ChatRequest, provider: &str, model: &str) -> Self {
        CacheKey::Chat {
            template_id: req.bundle.template_id,
            template_hash: req.bundle.template_hash.clone(),
            bindings: req.bundle.bindings.clone(),
            rendered: req.bundle.rendered.clone(),
            temperature: req.temperature,
            max_tokens: req.max_tokens,
            sample_index: req.sample_index,
            provider: provider.to_string(),
            model: model.to_string(),
        }
    }

    pub fn embedding(text: &str, provider: &str, model: &str) -> Self {
        CacheKey::Embedding {
            text: text.to_string(),
            provider: provider.to_string(),
            model: model.to_string(),
        }
    }

    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("cache key serializes");
        hex::encode(Sha256::digest(canonical))
    }
}

#[derive(Serialize, Deserialize)]
struct Entry<V> {
    key: CacheKey,
    value: V,
}

/// One JSON file per entry, named by the key digest.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    root: PathBuf,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

impl ResponseCache {
    pub fn new(root: impl AsRef<Path>) -> std::io::Result<Self> {
        let root = root.as_ref().to_path_buf();
        std::fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path_for(&self, digest: &str) -> PathBuf {
        self.root.join(format!("{digest}.json"))
    }

    pub fn get<V: DeserializeOwned>(&self, key: &CacheKey) -> Option<V> {
        let bytes = std::fs::read(self.path_for(&key.digest())).ok()?;
        match serde_json::from_slice::<Entry<V>>(&bytes) {
            // Guard against digest collisions and hand-edited files.
            Ok(e) if e.key == *key => Some(e.value),
            Ok(_) => None,
            Err(e) => {
                log::warn!("ignoring unreadable cache entry {}: {e}", key.digest());
                None
            }
        }
    }

    /// Writes to a unique temporary file and renames it into place, so
    /// readers never observe a partial entry.
    pub fn put<V: Serialize>(&self, key: &CacheKey, value: &V) -> std::io::Result<()> {
        let digest = key.digest();
        let entry = Entry {
            key: key.clone(),
            value,
        };
        let bytes = serde_json::to_vec_pretty(&entry)?;
        let n = TMP_COUNTER.fetch_add(1, Ordering::Relaxed);
        let tmp = self
            .root
            .join(format!(".{digest}.{}.{n}.tmp", std::process::id()));
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(&tmp, self.path_for(&digest))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::prompts::{bindings, render_prompt};

    fn request(temperature: f64, sample_index: u32, query: &str) -> ChatRequest {
        let bundle =
            render_prompt(TemplateId::DescribeQuery, bindings([("query", query)])).unwrap();
        ChatRequest::new(bundle, temperature, sample_index)
    }

    #[test]
    fn key_changes_with_every_component() {
        let base = CacheKey::chat(&request(0.7, 0, "SELECT 1"), "stub", "m1").digest();
        let variants = [
            CacheKey::chat(&request(0.5, 0, "SELECT 1"), "stub", "m1"),
            CacheKey::chat(&request(0.7, 1, "SELECT 1"), "stub", "m1"),
            CacheKey::chat(&request(0.7, 0, "SELECT 2"), "stub", "m1"),
            CacheKey::chat(&request(0.7, 0, "SELECT 1"), "stub", "m2"),
            CacheKey::chat(&request(0.7, 0, "SELECT 1"), "other", "m1"),
        ];
        for v in variants {
            assert_ne!(v.digest(), base);
        }
        let mut r = request(0.7, 0, "SELECT 1");
        r.bundle.template_hash = "edited".into();
        assert_ne!(CacheKey::chat(&r, "stub", "m1").digest(), base);
        assert_eq!(
            CacheKey::chat(&request(0.7, 0, "SELECT 1"), "stub", "m1").digest(),
            base
        );
    }

    #[test]
    fn put_then_get_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::new(dir.path()).unwrap();
        let key = CacheKey::embedding("list all pets", "stub", "e");
        let v = vec![0.1f64, 1.0 / 3.0, -2.5e-17];
        assert_eq!(cache.get::<Vec<f64>>(&key), None);
        cache.put(&key, &v).unwrap();
        assert_eq!(cache.get::<Vec<f64>>(&key), Some(v));
        let files: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(files.len(), 1);
    }
}
