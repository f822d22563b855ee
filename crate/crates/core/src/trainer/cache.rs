//! Snapshot cache keyed by training-input digests.
//!
//! A key covers the backend identity, the base model, the training config,
//! the phase seed and the participating datasets (content and effective
//! label sets), so two runs that would train identically share one entry.
//! Entries live in memory and, when a directory is configured, as JSON
//! files that survive the process.

use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::report::sha256_hex;

pub struct ModelCache<S> {
    dir: Option<PathBuf>,
    mem: HashMap<String, S>,
    pub hits: u64,
    pub misses: u64,
}

impl<S: Clone + Serialize + DeserializeOwned> ModelCache<S> {
    pub fn new(dir: Option<PathBuf>) -> Result<Self> {
        if let Some(dir) = &dir {
            fs::create_dir_all(dir).map_err(|e| Error::Io {
                path: dir.clone(),
                source: e,
            })?;
        }
        Ok(ModelCache {
            dir,
            mem: HashMap::new(),
            hits: 0,
            misses: 0,
        })
    }

    pub fn in_memory() -> Self {
        ModelCache {
            dir: None,
            mem: HashMap::new(),
            hits: 0,
            misses: 0,
        }
    }

    fn path_for(&self, key: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{key}.json")))
    }

    pub fn get(&mut self, key: &str) -> Option<S> {
        if let Some(hit) = self.mem.get(key) {
            self.hits += 1;
            return Some(hit.clone());
        }
        if let Some(path) = self.path_for(key) {
            if let Ok(data) = fs::read_to_string(&path) {
                if let Ok(snap) = serde_json::from_str::<S>(&data) {
                    self.hits += 1;
                    self.mem.insert(key.to_string(), snap.clone());
                    return Some(snap);
                }
            }
        }
        self.misses += 1;
        None
    }

    pub fn put(&mut self, key: &str, snapshot: &S) -> Result<()> {
        self.mem.insert(key.to_string(), snapshot.clone());
        if let Some(path) = self.path_for(key) {
            let json = serde_json::to_string(snapshot).map_err(|e| Error::Cache {
                path: path.clone(),
                message: e.to_string(),
            })?;
            fs::write(&path, json).map_err(|e| Error::Io { path, source: e })?;
        }
        Ok(())
    }

    pub fn entry_count(&self) -> usize {
        match &self.dir {
            Some(dir) => fs::read_dir(dir).map(|d| d.count()).unwrap_or(0),
            None => self.mem.len(),
        }
    }
}

/// Digest of an arbitrary serializable value, used for snapshot identity.
pub fn value_digest<S: Serialize>(value: &S) -> String {
    let bytes = serde_json::to_vec(value).expect("value serializes");
    sha256_hex(&bytes)[..24].to_string()
}
