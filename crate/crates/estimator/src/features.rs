//! Feature providers feeding the merger.
//!
//! The bundled provider stands in for pretrained backbones: each grid cell
//! is described by fixed random orthonormal projections of the pixels
//! around it, a small patch for the 2D map and a wider window for the
//! 3D-aware map.

use anymole_core::{Error, Image, Result};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureSource {
    TwoD,
    ThreeDAware,
    Merged,
}

/// `channels x (height * width)`, row-major positions.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub width: usize,
    pub height: usize,
    pub values: DMatrix<f64>,
    pub source: FeatureSource,
}

impl FeatureMap {
    pub fn channels(&self) -> usize {
        self.values.nrows()
    }

    pub fn check(&self) -> Result<()> {
        if self.channels() == 0 || self.values.ncols() != self.width * self.height {
            return Err(Error::contract(format!(
                "feature map has {} x {} values for a {}x{} grid",
                self.values.nrows(),
                self.values.ncols(),
                self.width,
                self.height
            )));
        }
        Ok(())
    }
}

pub trait FeatureProvider: Send + Sync {
    /// Stable identifier recorded in checkpoints.
    fn id(&self) -> String;

    /// `(f2d, f3d)` for one image; both maps share a grid.
    fn provide(&self, image: &Image) -> Result<(FeatureMap, FeatureMap)>;

    fn channels(&self) -> (usize, usize);

    /// Feature grid `(width, height)` for an image of the given size.
    fn grid(&self, image_width: usize, image_height: usize) -> Result<(usize, usize)>;
}

/// Checks a provider's output pair against the alignment contract.
pub fn provide_checked(p: &dyn FeatureProvider, image: &Image) -> Result<(FeatureMap, FeatureMap)> {
    let (a, b) = p.provide(image)?;
    a.check()?;
    b.check()?;
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::contract(format!(
            "provider {} returned misaligned maps: {}x{} vs {}x{}",
            p.id(),
            a.width,
            a.height,
            b.width,
            b.height
        )));
    }
    Ok((a, b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    /// Cell edge in pixels; the grid is `width / cell x height / cell`.
    pub cell: usize,
    /// Window edge of the 3D-aware descriptor, centered on the cell.
    pub window: usize,
    pub channels_2d: usize,
    pub channels_3d: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            cell: 4,
            window: 8,
            channels_2d: 16,
            channels_3d: 16,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticProvider {
    config: SyntheticConfig,
    image_channels: usize,
    proj_2d: DMatrix<f64>,
    proj_3d: DMatrix<f64>,
}

/// `rows x dim` with orthonormal rows.
fn orthonormal_rows(rows: usize, dim: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(dim, rows, |_, _| StandardNormal.sample(rng));
    g.qr().q().transpose()
}

impl SyntheticProvider {
    pub fn new(config: SyntheticConfig, image_channels: usize) -> Result<Self> {
        if config.cell == 0 || config.window < config.cell {
            return Err(Error::config("synthetic provider needs 0 < cell <= window"));
        }
        let d2 = config.cell * config.cell * image_channels;
        let d3 = config.window * config.window * image_channels;
        if config.channels_2d == 0 || config.channels_2d > d2 || config.channels_3d == 0 || config.channels_3d > d3 {
            return Err(Error::config(format!(
                "synthetic provider channels must be in 1..={d2} (2d) and 1..={d3} (3d)"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let proj_2d = orthonormal_rows(config.channels_2d, d2, &mut rng);
        let proj_3d = orthonormal_rows(config.channels_3d, d3, &mut rng);
        Ok(SyntheticProvider {
            config,
            image_channels,
            proj_2d,
            proj_3d,
        })
    }

    pub fn config(&self) -> &SyntheticConfig {
        &self.config
    }

    /// Pixels of the `edge x edge` square centered on cell `(cx, cy)`,
    /// zero outside the image.
    fn window(&self, img: &Image, cx: usize, cy: usize, edge: usize) -> Vec<f64> {
        let c = self.config.cell as isize;
        let off = (edge as isize - c) / 2;
        let x0 = cx as isize * c - off;
        let y0 = cy as isize * c - off;
        let mut out = Vec::with_capacity(edge * edge * img.channels);
        for dy in 0..edge as isize {
            for dx in 0..edge as isize {
                let (x, y) = (x0 + dx, y0 + dy);
                let inside = x >= 0 && y >= 0 && (x as usize) < img.width && (y as usize) < img.height;
                for ch in 0..img.channels {
                    out.push(if inside { img.get(x as usize, y as usize, ch) } else { 0.0 });
                }
            }
        }
        out
    }
}

impl FeatureProvider for SyntheticProvider {
    fn id(&self) -> String {
        let c = &self.config;
        format!(
            "synthetic-v1:cell={},window={},c2d={},c3d={},seed={}",
            c.cell, c.window, c.channels_2d, c.channels_3d, c.seed
        )
    }

    fn channels(&self) -> (usize, usize) {
        (self.config.channels_2d, self.config.channels_3d)
    }

    fn grid(&self, w: usize, h: usize) -> Result<(usize, usize)> {
        let c = self.config.cell;
        if w % c != 0 || h % c != 0 || w == 0 || h == 0 {
            return Err(Error::contract(format!("image {w}x{h} is not a multiple of the {c}px cell")));
        }
        Ok((w / c, h / c))
    }

    fn provide(&self, image: &Image) -> Result<(FeatureMap, FeatureMap)> {
        if image.channels != self.image_channels {
            return Err(Error::contract(format!(
                "provider expects {} image channels, got {}",
                self.image_channels, image.channels
            )));
        }
        let (gw, gh) = self.grid(image.width, image.height)?;
        let mut f2 = DMatrix::zeros(self.config.channels_2d, gw * gh);
        let mut f3 = DMatrix::zeros(self.config.channels_3d, gw * gh);
        for cy in 0..gh {
            for cx in 0..gw {
                let p = cy * gw + cx;
                let a = nalgebra::DVector::from_vec(self.window(image, cx, cy, self.config.cell));
                let b = nalgebra::DVector::from_vec(self.window(image, cx, cy, self.config.window));
                f2.set_column(p, &(&self.proj_2d * a));
                f3.set_column(p, &(&self.proj_3d * b));
            }
        }
        let map = |values, source| FeatureMap {
            width: gw,
            height: gh,
            values,
            source,
        };
        Ok((map(f2, FeatureSource::TwoD), map(f3, FeatureSource::ThreeDAware)))
    }
}
