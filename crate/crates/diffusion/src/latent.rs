//! Latent video tensors. Each frame is a `channels x (height * width)` matrix,
//! one column per spatial position.

use anymole_core::error::{Error, Result};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Frames per generated segment.
pub const SEGMENT_FRAMES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl LatentShape {
    pub fn positions(&self) -> usize {
        self.height * self.width
    }

    pub fn frame_len(&self) -> usize {
        self.channels * self.positions()
    }

    pub fn zeros(&self) -> DMatrix<f64> {
        DMatrix::zeros(self.channels, self.positions())
    }

    pub fn noise<R: Rng + ?Sized>(&self, rng: &mut R) -> DMatrix<f64> {
        DMatrix::from_fn(self.channels, self.positions(), |_, _| rng.sample(StandardNormal))
    }

    pub fn check(&self, m: &DMatrix<f64>) -> Result<()> {
        if m.nrows() != self.channels || m.ncols() != self.positions() {
            return Err(Error::contract(format!(
                "latent frame is {}x{}, expected {}x{}",
                m.nrows(),
                m.ncols(),
                self.channels,
                self.positions()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentVideo {
    pub shape: LatentShape,
    pub frames: Vec<DMatrix<f64>>,
    /// Noise level the values currently sit at.
    pub t: usize,
}

impl LatentVideo {
    pub fn new(shape: LatentShape, frames: Vec<DMatrix<f64>>, t: usize) -> Result<Self> {
        if frames.len() != SEGMENT_FRAMES {
            return Err(Error::contract(format!(
                "latent video has {} frames, segments have {SEGMENT_FRAMES}",
                frames.len()
            )));
        }
        for f in &frames {
            shape.check(f)?;
        }
        Ok(LatentVideo { shape, frames, t })
    }

    pub fn noise<R: Rng + ?Sized>(shape: LatentShape, t: usize, rng: &mut R) -> Self {
        LatentVideo {
            shape,
            frames: (0..SEGMENT_FRAMES).map(|_| shape.noise(rng)).collect(),
            t,
        }
    }

    /// All values, frame-major.
    pub fn flat(&self) -> Vec<f64> {
        self.frames.iter().flat_map(|f| f.iter().copied()).collect()
    }
}
