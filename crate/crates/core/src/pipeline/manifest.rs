use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// What a completed stage produced and under which configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Hash over the stage's config section and its inputs' artifact hashes.
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    /// Artifact file name (relative to the run directory) to SHA-256.
    pub artifacts: BTreeMap<String, String>,
}

/// `manifest.json` of a run directory.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    /// SHA-256 of the full configuration of the last stage run.
    pub config_sha256: String,
    pub stages: BTreeMap<String, StageRecord>,
}

impl Manifest {
    /// Reads the manifest in `dir`, or an empty one if there is none yet.
    pub fn load_or_default(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Writes atomically through a temporary file.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let tmp = dir.join(".manifest.json.tmp");
        std::fs::write(&tmp, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }

    /// Checks every artifact of `stage` against its recorded hash.
    pub fn verify(&self, dir: &Path, stage: &str) -> Result<()> {
        let record = self
            .stages
            .get(stage)
            .ok_or_else(|| Error::Config(format!("stage {stage} has no manifest record")))?;
        for (name, hash) in &record.artifacts {
            let path: PathBuf = dir.join(name);
            if !path.exists() {
                return Err(Error::Dependency {
                    stage: stage.to_string(),
                    required: stage.to_string(),
                    path,
                });
            }
            if &file_sha256(&path)? != hash {
                return Err(Error::Tampered { path });
            }
        }
        Ok(())
    }
}
