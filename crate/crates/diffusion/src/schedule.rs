//! Linear cumulative-alpha noise schedule and the deterministic reverse step.

use anymole_core::error::{Error, Result};
use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::latent::LatentShape;

pub const DEFAULT_STEPS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub t_max: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule { t_max: DEFAULT_STEPS }
    }
}

impl Schedule {
    /// `alpha_bar(t) = 1 - t / t_max`, so `alpha_bar(0) = 1` and `alpha_bar(t_max) = 0`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        1.0 - t as f64 / self.t_max as f64
    }

    pub fn check(&self, t: usize) -> Result<()> {
        if t > self.t_max {
            return Err(Error::contract(format!("timestep {t} exceeds {}", self.t_max)));
        }
        Ok(())
    }

    /// Coefficients `(c1, c2)` with `eps = c1 * z_t - c2 * x0` for `t >= 1`.
    pub fn eps_coefficients(&self, t: usize) -> (f64, f64) {
        let ab = self.alpha_bar(t);
        let s = (1.0 - ab).sqrt();
        (1.0 / s, ab.sqrt() / s)
    }

    /// `sqrt(ab) * z0 + sqrt(1 - ab) * eps` for a given noise draw.
    pub fn mix(&self, z0: &DMatrix<f64>, eps: &DMatrix<f64>, t: usize) -> DMatrix<f64> {
        if t == 0 {
            return z0.clone();
        }
        let ab = self.alpha_bar(t);
        z0 * ab.sqrt() + eps * (1.0 - ab).sqrt()
    }

    /// Noises one latent frame to level `t`, returning `(z_t, eps)`.
    pub fn forward_noise<R: Rng + ?Sized>(
        &self,
        z0: &DMatrix<f64>,
        t: usize,
        rng: &mut R,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.check(t)?;
        let shape = LatentShape {
            channels: z0.nrows(),
            height: 1,
            width: z0.ncols(),
        };
        let eps = shape.noise(rng);
        Ok((self.mix(z0, &eps, t), eps))
    }

    /// Deterministic reverse step from `t` to `t - 1` given an x0 prediction.
    pub fn ddim_step(&self, z_t: &DMatrix<f64>, x0: &DMatrix<f64>, t: usize) -> DMatrix<f64> {
        let (c1, c2) = self.eps_coefficients(t);
        let eps = z_t * c1 - x0 * c2;
        let ab = self.alpha_bar(t - 1);
        if t == 1 {
            return x0.clone();
        }
        x0 * ab.sqrt() + eps * (1.0 - ab).sqrt()
    }
}
