//! Interface a video interpolation model must provide to the adaptation and
//! guided-generation code. Out-of-tree models implement these traits.

use std::collections::BTreeMap;

use anymole_core::error::{Error, Result};
use anymole_core::image::Image;
use nalgebra::DMatrix;

use crate::latent::{LatentShape, LatentVideo};
use crate::params::{ModelParameters, Partition};
use crate::schedule::Schedule;

/// Inputs of one denoising call.
#[derive(Debug, Clone, Copy)]
pub struct Conditioning<'a> {
    pub first: &'a Image,
    pub last: &'a Image,
    pub text: &'a str,
    pub fps: u32,
    pub t: usize,
}

pub trait VideoBackend {
    fn latent_shape(&self) -> LatentShape;
    /// `(width, height, channels)` of images the codec accepts.
    fn image_size(&self) -> (usize, usize, usize);
    fn schedule(&self) -> &Schedule;
    fn supported_fps(&self) -> &[u32];
    fn parameters(&self) -> &ModelParameters;

    fn encode(&self, image: &Image) -> Result<DMatrix<f64>>;
    fn decode(&self, latent: &DMatrix<f64>) -> Result<Image>;

    /// Clean-video estimate for the noisy latents at `cond.t`.
    fn predict_x0(&self, z_t: &LatentVideo, cond: &Conditioning) -> Result<Vec<DMatrix<f64>>>;

    fn check_fps(&self, fps: u32) -> Result<()> {
        if !self.supported_fps().contains(&fps) {
            return Err(Error::config(format!(
                "fps {fps} not in supported set {:?}",
                self.supported_fps()
            )));
        }
        Ok(())
    }

    /// One deterministic reverse step `t -> t - 1`.
    fn denoise_step(&self, z_t: &LatentVideo, cond: &Conditioning) -> Result<LatentVideo> {
        self.check_fps(cond.fps)?;
        if cond.t == 0 || cond.t > self.schedule().t_max {
            return Err(Error::contract(format!("cannot denoise from timestep {}", cond.t)));
        }
        let x0 = self.predict_x0(z_t, cond)?;
        let frames = z_t
            .frames
            .iter()
            .zip(&x0)
            .map(|(z, x)| self.schedule().ddim_step(z, x, cond.t))
            .collect();
        LatentVideo::new(z_t.shape, frames, cond.t - 1)
    }
}

/// One noise-prediction training example, already encoded.
#[derive(Debug, Clone)]
pub struct TrainingExample<'a> {
    pub clean: &'a [DMatrix<f64>],
    pub first: &'a DMatrix<f64>,
    pub last: &'a DMatrix<f64>,
    pub text: &'a str,
    pub fps: u32,
    pub t: usize,
    pub noise: &'a [DMatrix<f64>],
}

/// Gradients per trainable tensor, keyed by tensor name.
pub type Gradients = BTreeMap<String, Vec<f64>>;

pub trait AdaptableBackend: VideoBackend {
    fn parameters_mut(&mut self) -> &mut ModelParameters;

    /// Mean squared noise-prediction error and its gradient with respect to
    /// every tensor in the requested sets.
    fn noise_loss_grad(&self, ex: &TrainingExample, sets: &[Partition]) -> Result<(f64, Gradients)>;
}
