//! Scene-specific joint estimator: merges a 2D and a 3D-aware feature map,
//! decodes per-joint heatmaps read out by soft-argmax, and regresses each
//! joint's depth from the merged feature sampled at its 2D position.

pub mod checkpoint;
pub mod features;
pub mod model;
pub mod ops;
pub mod train;

pub use features::{FeatureMap, FeatureProvider, FeatureSource, SyntheticConfig, SyntheticProvider};
pub use model::{
    heatmaps_to_joints, joint_loss, sample_feature, EstimatorConfig, EstimatorModel, Heatmaps, JointEstimate, ModelDims,
    Params,
};
pub use train::{build_dataset, evaluate_estimator, train_estimator, Dataset, TrainConfig, TrainReport};
