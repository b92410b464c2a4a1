//! Training on rendered context frames and keyframes.

use anymole_core::clips::{assemble_estimator_dataset, expand_weighted, EstimatorSample, FrameRef, ViewFrames};
use anymole_core::optim::Adam;
use anymole_core::{CameraParams, Error, Image, MotionSequence, Result, View};
use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::features::{provide_checked, FeatureMap, FeatureProvider};
use crate::model::{joint_loss, EstimatorConfig, EstimatorModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Views rendered into the dataset; the back view is never used.
    pub views: Vec<View>,
    /// How many times each keyframe sample enters the sampling pool.
    pub keyframe_weight: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 3500,
            batch_size: 32,
            learning_rate: 2e-3,
            views: vec![View::Front, View::Left, View::Right],
            keyframe_weight: 3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::config("estimator steps and batch size must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("estimator learning rate must be positive"));
        }
        if self.views.is_empty() {
            return Err(Error::config("estimator needs at least one view"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub losses: Vec<f64>,
    pub samples_used: usize,
    pub excluded: Vec<FrameRef>,
}

/// Samples paired with their images, ready for training.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<EstimatorSample>,
    pub images: Vec<Image>,
}

/// Builds the weighted dataset from a motion: context frames plus
/// keyframes for every configured view, imaged by `render`.
pub fn build_dataset(
    motion: &MotionSequence,
    cameras: &[(View, CameraParams)],
    config: &TrainConfig,
    render: &dyn Fn(View, &CameraParams, usize) -> Result<Image>,
) -> Result<Dataset> {
    let globals = motion.global_positions()?;
    let views = |frames: &[usize]| -> Vec<ViewFrames> {
        cameras
            .iter()
            .filter(|(v, _)| config.views.contains(v))
            .map(|(v, cam)| ViewFrames {
                view: *v,
                camera: cam.clone(),
                frames: frames.iter().map(|&f| (f, globals[f].clone())).collect(),
            })
            .collect()
    };
    let context: Vec<usize> = (0..motion.context_length).collect();
    let keys: Vec<usize> = motion
        .keyframe_indices
        .iter()
        .copied()
        .filter(|&k| k >= motion.context_length)
        .collect();
    let samples = assemble_estimator_dataset(&views(&context), &views(&keys), config.keyframe_weight, &config.views, false)?;
    let images = samples
        .iter()
        .map(|s| {
            let cam = &cameras.iter().find(|(v, _)| *v == s.image.view).expect("view came from cameras").1;
            render(s.image.view, cam, s.image.frame)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { samples, images })
}

fn inside(s: &EstimatorSample, w: usize, h: usize) -> bool {
    s.joints_screen
        .iter()
        .all(|j| j.x >= 0.0 && j.x < w as f64 && j.y >= 0.0 && j.y < h as f64)
}

/// Trains a fresh model by minimizing the squared joint error with Adam.
pub fn train_estimator(
    model_config: EstimatorConfig,
    data: &Dataset,
    provider: &dyn FeatureProvider,
    config: &TrainConfig,
) -> Result<(EstimatorModel, TrainReport)> {
    config.validate()?;
    if data.samples.len() != data.images.len() {
        return Err(Error::contract("dataset has a different number of samples and images"));
    }
    let first = data.images.first().ok_or_else(|| Error::config("estimator dataset is empty"))?;
    let (iw, ih) = (first.width, first.height);
    let joints = data.samples[0].joints_screen.len();

    let mut excluded = Vec::new();
    let mut kept = Vec::new();
    for (i, s) in data.samples.iter().enumerate() {
        if data.images[i].width != iw || data.images[i].height != ih {
            return Err(Error::contract("estimator images must share one size"));
        }
        if s.joints_screen.len() != joints {
            return Err(Error::contract("estimator samples disagree on the joint count"));
        }
        if inside(s, iw, ih) {
            kept.push(s.clone());
        } else {
            warn!("excluding {} frame {}: projected joints leave the image", s.image.view, s.image.frame);
            excluded.push(s.image.clone());
        }
    }
    if kept.is_empty() {
        return Err(Error::config("every estimator sample was excluded"));
    }
    let kept_images: Vec<&Image> = data
        .samples
        .iter()
        .zip(&data.images)
        .filter(|(s, _)| inside(s, iw, ih))
        .map(|(_, im)| im)
        .collect();

    let dims = EstimatorModel::dims_for(provider, joints, [iw, ih])?;
    let mut model = EstimatorModel::new(model_config, dims)?;
    let features: Vec<(FeatureMap, FeatureMap)> = kept_images
        .iter()
        .map(|im| provide_checked(provider, im))
        .collect::<Result<_>>()?;
    let targets: Vec<Vec<[f64; 3]>> = kept
        .iter()
        .map(|s| s.joints_screen.iter().map(|j| j.to_array()).collect())
        .collect();
    let pool = expand_weighted(&kept);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut flat = model.params.flatten();
    let mut adam = Adam::new(flat.len(), config.learning_rate);
    let mut losses = Vec::with_capacity(config.steps);
    let log_every = (config.steps / 10).max(1);
    for step in 0..config.steps {
        let batch: Vec<usize> = (0..config.batch_size)
            .map(|_| pool[rng.random_range(0..pool.len())])
            .collect();
        let pairs: Vec<&(FeatureMap, FeatureMap)> = batch.iter().map(|&i| &features[i]).collect();
        let (f2, f3) = model.stack(&pairs)?;
        let fw = model.forward(&f2, &f3, batch.len(), true)?;
        let target: Vec<[f64; 3]> = batch.iter().flat_map(|&i| targets[i].iter().copied()).collect();
        let (loss, dj) = joint_loss(&fw.joints, &target);
        if !loss.is_finite() {
            return Err(Error::contract(format!("estimator loss became non-finite at step {step}")));
        }
        let grad = model.backward(&fw, &dj)?.flatten();
        adam.step(&mut flat, &grad);
        model.params.unflatten(&flat)?;
        losses.push(loss);
        if step % log_every == 0 || step + 1 == config.steps {
            info!("estimator step {step}: loss {loss:.4}");
        }
    }
    let report = TrainReport {
        config: config.clone(),
        losses,
        samples_used: kept.len(),
        excluded,
    };
    Ok((model, report))
}

/// Mean 2D pixel error and mean absolute depth error of a model on labeled images.
pub fn evaluate_estimator(
    model: &EstimatorModel,
    provider: &dyn FeatureProvider,
    images: &[Image],
    targets: &[Vec<anymole_core::ScreenJoint>],
) -> Result<(f64, f64)> {
    let (mut e2, mut ed, mut n) = (0.0, 0.0, 0usize);
    for (im, t) in images.iter().zip(targets) {
        let est = model.estimate(provider, im)?;
        for (p, q) in est.joints.iter().zip(t) {
            e2 += ((p.x - q.x).powi(2) + (p.y - q.y).powi(2)).sqrt();
            ed += (p.depth - q.depth).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::config("no joints to evaluate"));
    }
    Ok((e2 / n as f64, ed / n as f64))
}
