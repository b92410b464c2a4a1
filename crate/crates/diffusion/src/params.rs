//! Named parameter tensors grouped into the four partition sets.

use std::collections::BTreeMap;

use anymole_core::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Spatial,
    Temporal,
    ImageProjector,
    FpsEmbedding,
}

impl Partition {
    pub const ALL: [Partition; 4] = [
        Partition::Spatial,
        Partition::Temporal,
        Partition::ImageProjector,
        Partition::FpsEmbedding,
    ];

    /// Sets updated during context adaptation.
    pub fn trainable(self) -> bool {
        matches!(self, Partition::Spatial | Partition::ImageProjector)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::contract(format!(
                "tensor shape {shape:?} does not match {} values",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n] }
    }
}

pub type ParamSet = BTreeMap<String, Tensor>;

/// All model parameters, split into four disjoint named sets.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelParameters {
    pub spatial: ParamSet,
    pub temporal: ParamSet,
    pub image_projector: ParamSet,
    pub fps_embedding: ParamSet,
}

impl ModelParameters {
    pub fn set(&self, p: Partition) -> &ParamSet {
        match p {
            Partition::Spatial => &self.spatial,
            Partition::Temporal => &self.temporal,
            Partition::ImageProjector => &self.image_projector,
            Partition::FpsEmbedding => &self.fps_embedding,
        }
    }

    pub fn set_mut(&mut self, p: Partition) -> &mut ParamSet {
        match p {
            Partition::Spatial => &mut self.spatial,
            Partition::Temporal => &mut self.temporal,
            Partition::ImageProjector => &mut self.image_projector,
            Partition::FpsEmbedding => &mut self.fps_embedding,
        }
    }

    /// Every tensor name with its owning set, in partition order.
    pub fn names(&self) -> Vec<(Partition, String)> {
        Partition::ALL
            .iter()
            .flat_map(|&p| self.set(p).keys().map(move |k| (p, k.clone())))
            .collect()
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        Partition::ALL
            .iter()
            .find_map(|&p| self.set(p).get(name))
            .ok_or_else(|| Error::contract(format!("no parameter named {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        let owner = Partition::ALL
            .iter()
            .copied()
            .find(|&p| self.set(p).contains_key(name))
            .ok_or_else(|| Error::contract(format!("no parameter named {name}")))?;
        Ok(self.set_mut(owner).get_mut(name).expect("owner checked"))
    }

    /// Errors if a name appears in more than one set.
    pub fn check_disjoint(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for (_, name) in self.names() {
            if !seen.insert(name.clone()) {
                return Err(Error::contract(format!("parameter {name} is in two sets")));
            }
        }
        Ok(())
    }

    pub fn param_count(&self, p: Partition) -> usize {
        self.set(p).values().map(|t| t.data.len()).sum()
    }

    /// Concatenated values of one set in name order.
    pub fn flatten(&self, p: Partition) -> Vec<f64> {
        self.set(p).values().flat_map(|t| t.data.iter().copied()).collect()
    }

    pub fn unflatten(&mut self, p: Partition, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count(p) {
            return Err(Error::contract("flat parameter length mismatch"));
        }
        let mut off = 0;
        for t in self.set_mut(p).values_mut() {
            let n = t.data.len();
            t.data.copy_from_slice(&values[off..off + n]);
            off += n;
        }
        Ok(())
    }
}
