//! The run manifest: the effective configuration plus, per stage, the
//! checksums of what it read and wrote.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anymole_core::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const MANIFEST_FORMAT: &str = "anymole-run-v1";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_bytes(&bytes))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StageRecord {
    /// Digest of the config sections the stage depends on.
    pub config_sha256: String,
    /// Input file (relative to the run root when inside it) to digest.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub config: RunConfig,
    pub versions: BTreeMap<String, String>,
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunManifest {
    pub fn new(config: RunConfig) -> Self {
        let versions = [
            ("anymole", env!("CARGO_PKG_VERSION")),
            ("manifest", MANIFEST_FORMAT),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        RunManifest {
            format: MANIFEST_FORMAT.to_string(),
            config,
            versions,
            stages: BTreeMap::new(),
        }
    }

    pub fn path(root: &Path) -> PathBuf {
        root.join(MANIFEST_FILE)
    }

    /// Reads the manifest under `root`, or starts a fresh one. The config
    /// snapshot is always replaced by `config`.
    pub fn open(root: &Path, config: &RunConfig) -> Result<Self> {
        let path = Self::path(root);
        let mut m = if path.exists() {
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let m: RunManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                context: e.to_string(),
            })?;
            if m.format != MANIFEST_FORMAT {
                return Err(Error::config(format!("{} has unknown format {}", path.display(), m.format)));
            }
            m
        } else {
            RunManifest::new(config.clone())
        };
        m.config = config.clone();
        Ok(m)
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let path = Self::path(root);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_empty_input() {
        // Standard SHA-256 test vector.
        assert_eq!(
            sha256_bytes(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn manifest_round_trip_keeps_records() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest::new(RunConfig::default());
        m.stages.insert(
            "synth-data".into(),
            StageRecord {
                config_sha256: "x".into(),
                ..Default::default()
            },
        );
        m.save(dir.path()).unwrap();
        let back = RunManifest::open(dir.path(), &RunConfig::default()).unwrap();
        assert_eq!(back, m);
    }
}
