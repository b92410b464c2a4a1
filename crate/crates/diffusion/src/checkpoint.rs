//! Parameter checkpoints: a little-endian f64 blob plus a JSON sidecar
//! describing the partition, tensor layout and run settings.

use std::path::{Path, PathBuf};

use anymole_core::error::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::params::{ModelParameters, Partition, Tensor};

pub const FORMAT: &str = "anymole-params-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub set: Partition,
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the blob, in values.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format: String,
    pub tensors: Vec<TensorEntry>,
    pub blob_sha256: String,
    /// Backend and adaptation settings, stored verbatim.
    pub metadata: serde_json::Value,
}

pub fn blob_path(sidecar: &Path) -> PathBuf {
    sidecar.with_extension("bin")
}

fn digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `path` (JSON) and the blob next to it with a `.bin` extension.
pub fn save(params: &ModelParameters, metadata: serde_json::Value, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    let mut tensors = Vec::new();
    let mut offset = 0;
    for (set, name) in params.names() {
        let t = params.set(set).get(&name).expect("listed");
        tensors.push(TensorEntry {
            set,
            name,
            shape: t.shape.clone(),
            offset,
        });
        offset += t.data.len();
        for v in &t.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let sidecar = Sidecar {
        format: FORMAT.into(),
        tensors,
        blob_sha256: digest(&bytes),
        metadata,
    };
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let blob = blob_path(path);
    std::fs::write(&blob, &bytes).map_err(|e| Error::io(&blob, e))?;
    let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(ModelParameters, Sidecar)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let sidecar: Sidecar = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        context: e.to_string(),
    })?;
    if sidecar.format != FORMAT {
        return Err(Error::config(format!("unknown checkpoint format {}", sidecar.format)));
    }
    let blob = blob_path(path);
    let bytes = std::fs::read(&blob).map_err(|e| Error::io(&blob, e))?;
    if digest(&bytes) != sidecar.blob_sha256 {
        return Err(Error::contract(format!("{} does not match its checksum", blob.display())));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut params = ModelParameters::default();
    for e in &sidecar.tensors {
        let n: usize = e.shape.iter().product();
        let data = values
            .get(e.offset..e.offset + n)
            .ok_or_else(|| Error::contract(format!("tensor {} runs past the blob", e.name)))?
            .to_vec();
        params.set_mut(e.set).insert(e.name.clone(), Tensor::new(e.shape.clone(), data)?);
    }
    params.check_disjoint()?;
    Ok((params, sidecar))
}
