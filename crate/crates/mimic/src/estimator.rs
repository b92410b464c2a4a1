//! What the optimizer needs from a joint estimator.

use std::collections::BTreeMap;

use anymole_core::{Error, Image, Result, ScreenJoint};
use anymole_estimator::{EstimatorModel, FeatureProvider};

/// Screen-space joints for a video frame. Implementations must be
/// read-only: tasks of a batch query them concurrently.
pub trait JointEstimator: Sync {
    fn estimate(&self, frame: usize, image: &Image) -> Result<Vec<ScreenJoint>>;
}

/// A trained scene-specific estimator with its feature provider.
pub struct SceneEstimator<'a> {
    pub model: &'a EstimatorModel,
    pub provider: &'a dyn FeatureProvider,
}

impl JointEstimator for SceneEstimator<'_> {
    fn estimate(&self, frame: usize, image: &Image) -> Result<Vec<ScreenJoint>> {
        self.model
            .estimate(self.provider, image)
            .map(|e| e.joints)
            .map_err(|e| e.context(format!("estimating frame {frame}")))
    }
}

/// Returns stored joints per frame; used when the true projections are known.
#[derive(Debug, Clone, Default)]
pub struct KnownJoints(pub BTreeMap<usize, Vec<ScreenJoint>>);

impl JointEstimator for KnownJoints {
    fn estimate(&self, frame: usize, _image: &Image) -> Result<Vec<ScreenJoint>> {
        self.0
            .get(&frame)
            .cloned()
            .ok_or_else(|| Error::contract(format!("no joints stored for frame {frame}")))
    }
}
