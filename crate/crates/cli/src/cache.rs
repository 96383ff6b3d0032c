//! Content-addressed cache for pipeline intermediates.
//!
//! A step's parameters hash to the cache key (so changed parameters never
//! alias), and a sidecar manifest records the SHA-256 of the data file; a
//! manifest or content mismatch forces a recompute, never a silent reuse.

use seba_core::error::{Result, SebaError};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Serialize, Deserialize)]
struct Manifest {
    schema: String,
    params: serde_json::Value,
    params_hash: String,
    content_sha256: String,
}

pub fn hash_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let out = h.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

pub struct CacheEntry {
    pub data_path: PathBuf,
    meta_path: PathBuf,
    params: serde_json::Value,
    params_hash: String,
    schema: String,
}

impl CacheEntry {
    pub fn params_hash(&self) -> &str {
        &self.params_hash
    }

    pub fn new(dir: &Path, step: &str, schema: &str, params: serde_json::Value) -> Result<Self> {
        let canonical = serde_json::to_string(&params)
            .map_err(|e| SebaError::Parse(format!("cache params: {e}")))?;
        let params_hash = hash_hex(format!("{schema}\n{canonical}").as_bytes());
        let short = &params_hash[..12];
        Ok(Self {
            data_path: dir.join(format!("{step}-{short}.csv")),
            meta_path: dir.join(format!("{step}-{short}.meta.json")),
            params,
            params_hash,
            schema: schema.to_string(),
        })
    }

    /// True when the manifest matches these parameters and the data file's
    /// content hash.
    pub fn is_hit(&self) -> bool {
        let Ok(meta_bytes) = std::fs::read(&self.meta_path) else {
            return false;
        };
        let Ok(meta) = serde_json::from_slice::<Manifest>(&meta_bytes) else {
            return false;
        };
        if meta.schema != self.schema || meta.params_hash != self.params_hash {
            return false;
        }
        let Ok(data) = std::fs::read(&self.data_path) else {
            return false;
        };
        hash_hex(&data) == meta.content_sha256
    }

    /// Record the manifest after the data file has been written.
    pub fn commit(&self) -> Result<()> {
        let data = std::fs::read(&self.data_path)?;
        let manifest = Manifest {
            schema: self.schema.clone(),
            params: self.params.clone(),
            params_hash: self.params_hash.clone(),
            content_sha256: hash_hex(&data),
        };
        let body = serde_json::to_vec_pretty(&manifest)
            .map_err(|e| SebaError::Parse(format!("cache manifest: {e}")))?;
        seba_core::io::atomic_write(&self.meta_path, &body)
    }
}
