use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct Entry {
    prompt_hash: String,
    response: String,
}

#[derive(Debug)]
enum Store {
    Memory(Mutex<HashMap<String, String>>),
    /// One `<hash>.json` file per prompt.
    Dir(PathBuf),
}

/// Raw responses keyed by prompt hash.
#[derive(Debug)]
pub struct ResponseCache {
    store: Store,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self {
            store: Store::Memory(Mutex::new(HashMap::new())),
        }
    }

    pub fn in_dir(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self { store: Store::Dir(dir) })
    }

    fn file(dir: &std::path::Path, hash: &str) -> Result<PathBuf> {
        if hash.is_empty() || !hash.chars().all(|c| c.is_ascii_hexdigit()) {
            return Err(Error::Config(format!("cache key {hash:?} is not a hex digest")));
        }
        Ok(dir.join(format!("{hash}.json")))
    }

    pub fn get(&self, hash: &str) -> Result<Option<String>> {
        match &self.store {
            Store::Memory(m) => Ok(m.lock().expect("cache lock").get(hash).cloned()),
            Store::Dir(dir) => {
                let path = Self::file(dir, hash)?;
                if !path.exists() {
                    return Ok(None);
                }
                let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                let entry: Entry = serde_json::from_str(&text)?;
                // a file renamed onto another key must not answer for it
                Ok((entry.prompt_hash == hash).then_some(entry.response))
            }
        }
    }

    pub fn put(&self, hash: &str, response: &str) -> Result<()> {
        match &self.store {
            Store::Memory(m) => {
                m.lock().expect("cache lock").insert(hash.to_string(), response.to_string());
                Ok(())
            }
            Store::Dir(dir) => {
                let path = Self::file(dir, hash)?;
                let entry = Entry {
                    prompt_hash: hash.to_string(),
                    response: response.to_string(),
                };
                let tmp = path.with_extension("tmp");
                fs::write(&tmp, serde_json::to_vec(&entry)?).map_err(|e| Error::io(&tmp, e))?;
                fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
            }
        }
    }

    pub fn len(&self) -> Result<usize> {
        match &self.store {
            Store::Memory(m) => Ok(m.lock().expect("cache lock").len()),
            Store::Dir(dir) => {
                let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
                Ok(entries
                    .filter_map(|e| e.ok())
                    .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
                    .count())
            }
        }
    }

    pub fn is_empty(&self) -> Result<bool> {
        self.len().map(|n| n == 0)
    }
}
