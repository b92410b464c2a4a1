//! In-context adaptation: fine-tune the spatial and image-projector sets on
//! clips rendered from the context, leaving temporal and fps sets untouched.

use std::collections::BTreeMap;

use anymole_core::error::{Error, Result};
use anymole_core::image::Image;
use anymole_core::optim::Adam;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{AdaptableBackend, TrainingExample};
use crate::latent::SEGMENT_FRAMES;
use crate::params::Partition;

pub const DEFAULT_TEXT: &str = "a character moving in place";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub views: usize,
    pub intervals: Vec<usize>,
    pub text: String,
    pub seed: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            steps: 500,
            learning_rate: 1e-5,
            batch_size: 16,
            views: 4,
            intervals: vec![1, 2, 3],
            text: DEFAULT_TEXT.to_string(),
            seed: 0,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || !(self.learning_rate > 0.0) || self.batch_size == 0 {
            return Err(Error::config("adaptation needs positive steps, learning rate and batch size"));
        }
        if self.intervals.is_empty() || self.intervals.contains(&0) {
            return Err(Error::config("adaptation intervals must be positive"));
        }
        Ok(())
    }
}

/// A 16-frame clip with its playback rate.
#[derive(Debug, Clone)]
pub struct VideoClip {
    pub frames: Vec<Image>,
    pub fps: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptReport {
    pub config: AdaptConfig,
    pub losses: Vec<f64>,
    /// Optimizer steps applied per parameter set; frozen sets stay at zero.
    pub updates: BTreeMap<Partition, usize>,
    /// Number of scalars with optimizer state, per set.
    pub optimizer_state: BTreeMap<Partition, usize>,
}

impl AdaptReport {
    pub fn mean_loss(&self, range: std::ops::Range<usize>) -> f64 {
        let s = &self.losses[range];
        s.iter().sum::<f64>() / s.len() as f64
    }
}

/// A clip given as indices into a shared frame pool, so frames that several
/// clips share are encoded once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledClip {
    pub frames: Vec<usize>,
    pub fps: u32,
}

pub fn icadapt<B: AdaptableBackend>(model: &mut B, clips: &[VideoClip], config: &AdaptConfig) -> Result<AdaptReport> {
    let pool: Vec<&Image> = clips.iter().flat_map(|c| c.frames.iter()).collect();
    let mut start = 0;
    let pooled: Vec<PooledClip> = clips
        .iter()
        .map(|c| {
            let frames = (start..start + c.frames.len()).collect();
            start += c.frames.len();
            PooledClip { frames, fps: c.fps }
        })
        .collect();
    icadapt_pooled(model, &pool, &pooled, config)
}

/// Adaptation over clips that index into `pool`.
pub fn icadapt_pooled<B: AdaptableBackend>(
    model: &mut B,
    pool: &[&Image],
    clips: &[PooledClip],
    config: &AdaptConfig,
) -> Result<AdaptReport> {
    config.validate()?;
    if clips.is_empty() {
        return Err(Error::config("adaptation needs at least one clip"));
    }
    for (i, clip) in clips.iter().enumerate() {
        if clip.frames.len() != SEGMENT_FRAMES {
            return Err(Error::contract(format!(
                "clip {i} has {} frames, expected {SEGMENT_FRAMES}",
                clip.frames.len()
            )));
        }
        if let Some(&f) = clip.frames.iter().find(|&&f| f >= pool.len()) {
            return Err(Error::contract(format!("clip {i} refers to frame {f} outside the pool")));
        }
        model.check_fps(clip.fps)?;
    }
    let mut latents: Vec<Option<DMatrix<f64>>> = vec![None; pool.len()];
    for clip in clips {
        for &f in &clip.frames {
            if latents[f].is_none() {
                latents[f] = Some(model.encode(pool[f])?);
            }
        }
    }

    let trainable: Vec<Partition> = Partition::ALL.into_iter().filter(|p| p.trainable()).collect();
    let mut optimizers: BTreeMap<String, (Partition, Adam)> = BTreeMap::new();
    for &p in &trainable {
        for (name, t) in model.parameters().set(p) {
            optimizers.insert(name.clone(), (p, Adam::new(t.data.len(), config.learning_rate)));
        }
    }
    let mut updates: BTreeMap<Partition, usize> = Partition::ALL.iter().map(|&p| (p, 0)).collect();
    let mut optimizer_state: BTreeMap<Partition, usize> = Partition::ALL.iter().map(|&p| (p, 0)).collect();
    for (p, adam) in optimizers.values() {
        *optimizer_state.get_mut(p).expect("all sets") += adam.len();
    }

    let shape = model.latent_shape();
    let t_max = model.schedule().t_max;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut losses = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let mut total: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let mut loss = 0.0;
        for _ in 0..config.batch_size {
            let clip = &clips[rng.random_range(0..clips.len())];
            let t = rng.random_range(1..=t_max);
            let noise: Vec<_> = (0..SEGMENT_FRAMES).map(|_| shape.noise(&mut rng)).collect();
            let clean: Vec<DMatrix<f64>> = clip
                .frames
                .iter()
                .map(|&f| latents[f].clone().expect("encoded above"))
                .collect();
            let ex = TrainingExample {
                clean: &clean,
                first: &clean[0],
                last: &clean[SEGMENT_FRAMES - 1],
                text: &config.text,
                fps: clip.fps,
                t,
                noise: &noise,
            };
            let (l, grads) = model.noise_loss_grad(&ex, &trainable)?;
            loss += l;
            for (name, g) in grads {
                let acc = total.entry(name).or_insert_with(|| vec![0.0; g.len()]);
                acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            }
        }
        let scale = 1.0 / config.batch_size as f64;
        for (name, (p, adam)) in optimizers.iter_mut() {
            let Some(g) = total.get_mut(name) else { continue };
            g.iter_mut().for_each(|v| *v *= scale);
            let tensor = model.parameters_mut().set_mut(*p).get_mut(name).expect("registered");
            adam.step(&mut tensor.data, g);
        }
        for p in &trainable {
            *updates.get_mut(p).expect("all sets") += 1;
        }
        loss *= scale;
        if !loss.is_finite() {
            return Err(Error::contract(format!("adaptation loss diverged at step {step}")));
        }
        log::debug!("adapt step {step}: loss {loss:.6}");
        losses.push(loss);
    }
    Ok(AdaptReport {
        config: config.clone(),
        losses,
        updates,
        optimizer_state,
    })
}
