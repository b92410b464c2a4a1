//! Estimator checkpoints: little-endian f64 parameters plus a JSON sidecar.

use std::path::{Path, PathBuf};

use anymole_core::{Error, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::features::{SyntheticConfig, SyntheticProvider};
use crate::model::{EstimatorConfig, EstimatorModel, ModelDims, Params};
use crate::train::TrainConfig;

pub const FORMAT: &str = "anymole-estimator-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format: String,
    pub joints: usize,
    pub channels: usize,
    pub heatmap: [usize; 2],
    pub config: EstimatorConfig,
    pub dims: ModelDims,
    pub provider_id: String,
    pub provider: SyntheticConfig,
    pub training: Option<TrainConfig>,
    pub tensors: Vec<TensorEntry>,
    pub blob_sha256: String,
}

pub fn blob_path(sidecar: &Path) -> PathBuf {
    sidecar.with_extension("bin")
}

fn digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn save(
    model: &EstimatorModel,
    provider: &SyntheticProvider,
    training: Option<&TrainConfig>,
    path: &Path,
) -> Result<()> {
    use crate::features::FeatureProvider;
    let bytes: Vec<u8> = model.params.flatten().iter().flat_map(|v| v.to_le_bytes()).collect();
    let sidecar = Sidecar {
        format: FORMAT.into(),
        joints: model.dims.joints,
        channels: model.config.channels,
        heatmap: model.config.heatmap,
        config: model.config.clone(),
        dims: model.dims,
        provider_id: provider.id(),
        provider: provider.config().clone(),
        training: training.cloned(),
        tensors: model
            .params
            .tensors()
            .iter()
            .map(|(n, t)| TensorEntry {
                name: n.to_string(),
                shape: [t.nrows(), t.ncols()],
            })
            .collect(),
        blob_sha256: digest(&bytes),
    };
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let blob = blob_path(path);
    std::fs::write(&blob, &bytes).map_err(|e| Error::io(&blob, e))?;
    let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

/// Loads a model and rebuilds the provider it was trained with.
pub fn load(path: &Path, image_channels: usize) -> Result<(EstimatorModel, SyntheticProvider, Sidecar)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let sidecar: Sidecar = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        context: e.to_string(),
    })?;
    if sidecar.format != FORMAT {
        return Err(Error::config(format!("unknown estimator checkpoint format {}", sidecar.format)));
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
    let mut model = EstimatorModel::new(sidecar.config.clone(), sidecar.dims)?;
    for (entry, (name, t)) in sidecar.tensors.iter().zip(model.params.tensors()) {
        if entry.name != name || entry.shape != [t.nrows(), t.ncols()] {
            return Err(Error::contract(format!("checkpoint tensor {} does not match the model layout", entry.name)));
        }
    }
    model.params.unflatten(&values)?;
    let provider = SyntheticProvider::new(sidecar.provider.clone(), image_channels)?;
    if crate::features::FeatureProvider::id(&provider) != sidecar.provider_id {
        return Err(Error::config(format!("unsupported feature provider {}", sidecar.provider_id)));
    }
    Ok((model, provider, sidecar))
}

/// Shapes of every tensor, for quick inspection.
pub fn shapes(params: &Params) -> Vec<(&'static str, (usize, usize))> {
    params.tensors().iter().map(|(n, t): &(&str, &DMatrix<f64>)| (*n, t.shape())).collect()
}
