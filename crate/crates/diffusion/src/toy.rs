//! Small linear video denoiser with an invertible patch codec.
//!
//! The codec folds `patch x patch` pixel blocks into channels and mixes them
//! with a fixed orthogonal matrix, so it is exactly invertible. The model
//! predicts the clean video as
//!
//! ```text
//! u_g  = Ws z_g + bs + a_g Wp e_first + b_g Wp e_last + fps[k] + text
//! x0_f = sum_g Wt[f, g] u_g + bt[f]
//! ```
//!
//! `Ws, bs` form the spatial set (per-frame), `Wp, a, b` the image projector,
//! `Wt, bt` the temporal set (cross-frame) and the fps table its own set.

use anymole_core::error::{Error, Result};
use anymole_core::image::Image;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::{AdaptableBackend, Conditioning, Gradients, TrainingExample, VideoBackend};
use crate::latent::{LatentShape, LatentVideo, SEGMENT_FRAMES};
use crate::params::{ModelParameters, ParamSet, Partition, Tensor};
use crate::schedule::Schedule;

pub const TOY_FPS: [u32; 4] = [5, 10, 15, 30];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub image_width: usize,
    pub image_height: usize,
    pub image_channels: usize,
    pub patch: usize,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            image_width: 64,
            image_height: 64,
            image_channels: 3,
            patch: 4,
            seed: 0,
        }
    }
}

impl ToyConfig {
    pub fn latent_shape(&self) -> LatentShape {
        LatentShape {
            channels: self.image_channels * self.patch * self.patch,
            height: self.image_height / self.patch,
            width: self.image_width / self.patch,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch == 0
            || self.image_width % self.patch != 0
            || self.image_height % self.patch != 0
            || self.image_width == 0
            || self.image_height == 0
        {
            return Err(Error::config("toy codec needs image sides divisible by a positive patch"));
        }
        if !matches!(self.image_channels, 1 | 3) {
            return Err(Error::config("toy codec supports 1 or 3 image channels"));
        }
        Ok(())
    }
}

/// Space-to-depth followed by an orthogonal channel mix.
#[derive(Debug, Clone)]
pub struct ToyCodec {
    config: ToyConfig,
    mix: DMatrix<f64>,
}

impl ToyCodec {
    pub fn new(config: &ToyConfig) -> Result<Self> {
        config.validate()?;
        let c = config.latent_shape().channels;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xC0DEC);
        let g = DMatrix::from_fn(c, c, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mix = g.qr().q();
        Ok(ToyCodec {
            config: config.clone(),
            mix,
        })
    }

    fn fold(&self, image: &Image) -> DMatrix<f64> {
        let s = self.config.patch;
        let shape = self.config.latent_shape();
        DMatrix::from_fn(shape.channels, shape.positions(), |r, p| {
            let (py, px) = (p / shape.width, p % shape.width);
            let (c, rem) = (r / (s * s), r % (s * s));
            let (dy, dx) = (rem / s, rem % s);
            image.get(px * s + dx, py * s + dy, c)
        })
    }

    pub fn encode(&self, image: &Image) -> Result<DMatrix<f64>> {
        let c = &self.config;
        if image.width != c.image_width || image.height != c.image_height || image.channels != c.image_channels {
            return Err(Error::contract(format!(
                "image {}x{}x{} does not match codec {}x{}x{}",
                image.width, image.height, image.channels, c.image_width, c.image_height, c.image_channels
            )));
        }
        Ok(&self.mix * self.fold(image))
    }

    pub fn decode(&self, latent: &DMatrix<f64>) -> Result<Image> {
        let shape = self.config.latent_shape();
        shape.check(latent)?;
        let folded = self.mix.transpose() * latent;
        let s = self.config.patch;
        let c = &self.config;
        let mut img = Image::filled(c.image_width, c.image_height, c.image_channels, 0.0);
        for p in 0..shape.positions() {
            let (py, px) = (p / shape.width, p % shape.width);
            for r in 0..shape.channels {
                let (ch, rem) = (r / (s * s), r % (s * s));
                let (dy, dx) = (rem / s, rem % s);
                img.set(px * s + dx, py * s + dy, ch, folded[(r, p)]);
            }
        }
        Ok(img)
    }
}

pub const SPATIAL_WEIGHT: &str = "spatial.weight";
pub const SPATIAL_BIAS: &str = "spatial.bias";
pub const PROJECTOR_WEIGHT: &str = "projector.weight";
pub const PROJECTOR_FIRST: &str = "projector.first_gain";
pub const PROJECTOR_LAST: &str = "projector.last_gain";
pub const TEMPORAL_WEIGHT: &str = "temporal.weight";
pub const TEMPORAL_BIAS: &str = "temporal.bias";
pub const FPS_TABLE: &str = "fps.table";

#[derive(Debug, Clone)]
pub struct ToyBackend {
    pub config: ToyConfig,
    codec: ToyCodec,
    schedule: Schedule,
    params: ModelParameters,
}

fn gauss(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn near_identity(rng: &mut ChaCha8Rng, n: usize, diag: f64, noise: f64) -> Vec<f64> {
    let mut v = gauss(rng, n * n, noise);
    for i in 0..n {
        v[i * n + i] += diag;
    }
    v
}

fn matrix(t: &Tensor) -> DMatrix<f64> {
    DMatrix::from_row_slice(t.shape[0], t.shape[1], &t.data)
}

/// Row-major flattening, matching `matrix`.
fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().iter().copied().collect()
}

/// Fixed, non-learned text vector derived from the prompt.
pub fn text_vector(text: &str, channels: usize) -> DVector<f64> {
    let digest = Sha256::digest(text.as_bytes());
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest[..32]);
    let mut rng = ChaCha8Rng::from_seed(seed);
    DVector::from_fn(channels, |_, _| 0.05 * rng.sample::<f64, _>(StandardNormal))
}

struct Forward {
    pe_first: DMatrix<f64>,
    pe_last: DMatrix<f64>,
    x0: Vec<DMatrix<f64>>,
}

impl ToyBackend {
    pub fn new(config: ToyConfig) -> Result<Self> {
        let codec = ToyCodec::new(&config)?;
        let c = config.latent_shape().channels;
        let f = SEGMENT_FRAMES;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let t = |shape: Vec<usize>, data: Vec<f64>| Tensor::new(shape, data).expect("shape");
        let mut spatial = ParamSet::new();
        spatial.insert(SPATIAL_WEIGHT.into(), t(vec![c, c], near_identity(&mut rng, c, 1.0, 0.01)));
        spatial.insert(SPATIAL_BIAS.into(), Tensor::zeros(vec![c]));
        let mut projector = ParamSet::new();
        projector.insert(PROJECTOR_WEIGHT.into(), t(vec![c, c], near_identity(&mut rng, c, 0.1, 0.01)));
        let last: Vec<f64> = (0..f).map(|i| i as f64 / (f - 1) as f64).collect();
        projector.insert(PROJECTOR_FIRST.into(), t(vec![f], last.iter().map(|v| 1.0 - v).collect()));
        projector.insert(PROJECTOR_LAST.into(), t(vec![f], last));
        let mut temporal = ParamSet::new();
        temporal.insert(TEMPORAL_WEIGHT.into(), t(vec![f, f], near_identity(&mut rng, f, 1.0, 0.01)));
        temporal.insert(TEMPORAL_BIAS.into(), Tensor::zeros(vec![f]));
        let mut fps = ParamSet::new();
        fps.insert(FPS_TABLE.into(), t(vec![TOY_FPS.len(), c], gauss(&mut rng, TOY_FPS.len() * c, 0.05)));
        let params = ModelParameters {
            spatial,
            temporal,
            image_projector: projector,
            fps_embedding: fps,
        };
        params.check_disjoint()?;
        Ok(ToyBackend {
            config,
            codec,
            schedule: Schedule::default(),
            params,
        })
    }

    /// Replaces all parameters, e.g. from a checkpoint.
    pub fn with_parameters(mut self, params: ModelParameters) -> Result<Self> {
        if params.names() != self.params.names() {
            return Err(Error::contract("parameter names do not match the toy backend layout"));
        }
        for (_, name) in params.names() {
            if params.get(&name)?.shape != self.params.get(&name)?.shape {
                return Err(Error::contract(format!("parameter {name} has the wrong shape")));
            }
        }
        self.params = params;
        Ok(self)
    }

    fn fps_index(&self, fps: u32) -> Result<usize> {
        self.check_fps(fps)?;
        Ok(TOY_FPS.iter().position(|&f| f == fps).expect("checked"))
    }

    fn forward(&self, z: &[DMatrix<f64>], e_first: &DMatrix<f64>, e_last: &DMatrix<f64>, text: &str, fps: u32) -> Result<Forward> {
        let shape = self.latent_shape();
        if z.len() != SEGMENT_FRAMES {
            return Err(Error::contract("toy model expects 16 latent frames"));
        }
        let k = self.fps_index(fps)?;
        let p = &self.params;
        let ws = matrix(p.get(SPATIAL_WEIGHT)?);
        let wp = matrix(p.get(PROJECTOR_WEIGHT)?);
        let wt = matrix(p.get(TEMPORAL_WEIGHT)?);
        let a = &p.get(PROJECTOR_FIRST)?.data;
        let b = &p.get(PROJECTOR_LAST)?.data;
        let bt = &p.get(TEMPORAL_BIAS)?.data;
        let table = p.get(FPS_TABLE)?;
        let c = shape.channels;
        let cvec = DVector::from_column_slice(&p.get(SPATIAL_BIAS)?.data)
            + DVector::from_column_slice(&table.data[k * c..(k + 1) * c])
            + text_vector(text, c);
        let pe_first = &wp * e_first;
        let pe_last = &wp * e_last;
        let u: Vec<DMatrix<f64>> = z
            .iter()
            .enumerate()
            .map(|(g, zg)| {
                let mut ug = &ws * zg + &pe_first * a[g] + &pe_last * b[g];
                for mut col in ug.column_iter_mut() {
                    col += &cvec;
                }
                ug
            })
            .collect();
        let x0 = (0..SEGMENT_FRAMES)
            .map(|f| {
                let mut acc = DMatrix::from_element(c, shape.positions(), bt[f]);
                for (g, ug) in u.iter().enumerate() {
                    acc += ug * wt[(f, g)];
                }
                acc
            })
            .collect();
        Ok(Forward {
            pe_first,
            pe_last,
            x0,
        })
    }
}

impl VideoBackend for ToyBackend {
    fn latent_shape(&self) -> LatentShape {
        self.config.latent_shape()
    }

    fn image_size(&self) -> (usize, usize, usize) {
        (self.config.image_width, self.config.image_height, self.config.image_channels)
    }

    fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    fn supported_fps(&self) -> &[u32] {
        &TOY_FPS
    }

    fn parameters(&self) -> &ModelParameters {
        &self.params
    }

    fn encode(&self, image: &Image) -> Result<DMatrix<f64>> {
        self.codec.encode(image)
    }

    fn decode(&self, latent: &DMatrix<f64>) -> Result<Image> {
        self.codec.decode(latent)
    }

    fn predict_x0(&self, z_t: &LatentVideo, cond: &Conditioning) -> Result<Vec<DMatrix<f64>>> {
        let e_first = self.encode(cond.first)?;
        let e_last = self.encode(cond.last)?;
        Ok(self.forward(&z_t.frames, &e_first, &e_last, cond.text, cond.fps)?.x0)
    }
}

impl AdaptableBackend for ToyBackend {
    fn parameters_mut(&mut self) -> &mut ModelParameters {
        &mut self.params
    }

    fn noise_loss_grad(&self, ex: &TrainingExample, sets: &[Partition]) -> Result<(f64, Gradients)> {
        self.schedule.check(ex.t)?;
        if ex.t == 0 {
            return Err(Error::contract("noise prediction needs t >= 1"));
        }
        if ex.clean.len() != SEGMENT_FRAMES || ex.noise.len() != SEGMENT_FRAMES {
            return Err(Error::contract("training clips must have 16 frames"));
        }
        let z: Vec<DMatrix<f64>> = ex
            .clean
            .iter()
            .zip(ex.noise)
            .map(|(x, e)| self.schedule.mix(x, e, ex.t))
            .collect();
        let fwd = self.forward(&z, ex.first, ex.last, ex.text, ex.fps)?;
        let (c1, c2) = self.schedule.eps_coefficients(ex.t);
        let n = (SEGMENT_FRAMES * self.latent_shape().frame_len()) as f64;
        let mut loss = 0.0;
        // dL/dx0_f = 2 c2 (eps - eps_hat) / n, with eps_hat = c1 z - c2 x0.
        let g_x0: Vec<DMatrix<f64>> = (0..SEGMENT_FRAMES)
            .map(|f| {
                let r = &ex.noise[f] - (&z[f] * c1 - &fwd.x0[f] * c2);
                loss += r.norm_squared();
                r * (2.0 * c2 / n)
            })
            .collect();
        loss /= n;

        let mut grads = Gradients::new();
        let wants = |p: Partition| sets.contains(&p);
        if wants(Partition::Temporal) || wants(Partition::FpsEmbedding) {
            return Err(Error::contract("toy backend only differentiates spatial and projector sets"));
        }
        if !wants(Partition::Spatial) && !wants(Partition::ImageProjector) {
            return Ok((loss, grads));
        }
        let wt = matrix(self.params.get(TEMPORAL_WEIGHT)?);
        let d_u: Vec<DMatrix<f64>> = (0..SEGMENT_FRAMES)
            .map(|g| {
                let mut acc = DMatrix::zeros(g_x0[0].nrows(), g_x0[0].ncols());
                for (f, gf) in g_x0.iter().enumerate() {
                    acc += gf * wt[(f, g)];
                }
                acc
            })
            .collect();
        if wants(Partition::Spatial) {
            let c = d_u[0].nrows();
            let mut d_ws = DMatrix::zeros(c, c);
            let mut d_bs = DVector::zeros(c);
            for (du, zg) in d_u.iter().zip(&z) {
                d_ws += du * zg.transpose();
                d_bs += du.column_sum();
            }
            grads.insert(SPATIAL_WEIGHT.into(), row_major(&d_ws));
            grads.insert(SPATIAL_BIAS.into(), d_bs.iter().copied().collect());
        }
        if wants(Partition::ImageProjector) {
            let a = &self.params.get(PROJECTOR_FIRST)?.data;
            let b = &self.params.get(PROJECTOR_LAST)?.data;
            let mut d_pf = DMatrix::zeros(d_u[0].nrows(), d_u[0].ncols());
            let mut d_pl = d_pf.clone();
            let mut d_a = vec![0.0; SEGMENT_FRAMES];
            let mut d_b = vec![0.0; SEGMENT_FRAMES];
            for (g, du) in d_u.iter().enumerate() {
                d_a[g] = du.dot(&fwd.pe_first);
                d_b[g] = du.dot(&fwd.pe_last);
                d_pf += du * a[g];
                d_pl += du * b[g];
            }
            let d_wp = d_pf * ex.first.transpose() + d_pl * ex.last.transpose();
            grads.insert(PROJECTOR_WEIGHT.into(), row_major(&d_wp));
            grads.insert(PROJECTOR_FIRST.into(), d_a);
            grads.insert(PROJECTOR_LAST.into(), d_b);
        }
        Ok((loss, grads))
    }
}
