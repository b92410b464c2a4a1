//! The estimator network and its backward pass.
//!
//! ```text
//! f2d -> conv3x3+relu --\
//!                        concat -> conv1x1 = F
//! f3d -> conv3x3+relu --/
//! F -> conv3x3+relu = h1 -> conv3x3+relu -> conv3x3 (zero init) = r
//! h1 + r -> conv1x1 -> bilinear resize = heatmaps -> soft-argmax = (x, y)
//! [F(x, y), x, y, e_j] -> mlp -> ndc depth -> * H/2
//! ```

use anymole_core::{Error, Image, Result, ScreenJoint};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::features::{provide_checked, FeatureMap, FeatureProvider, FeatureSource};
use crate::ops::{
    add_bias, col2im3, im2col3, relu, relu_backward, resize, resize_backward, resize_taps, soft_argmax,
    soft_argmax_backward, Grid, Tap,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    /// Merged feature channels `C`.
    pub channels: usize,
    /// Heatmap `[width, height]`.
    pub heatmap: [usize; 2],
    pub mlp_hidden: usize,
    pub seed: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            channels: 16,
            heatmap: [64, 64],
            mlp_hidden: 32,
            seed: 0,
        }
    }
}

/// Sizes fixed when a model is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub joints: usize,
    pub channels_2d: usize,
    pub channels_3d: usize,
    pub grid: [usize; 2],
    pub image: [usize; 2],
}

macro_rules! param_set {
    ($($name:ident),* $(,)?) => {
        /// Every trainable tensor; biases are single-column matrices.
        #[derive(Debug, Clone, PartialEq)]
        pub struct Params {
            $(pub $name: DMatrix<f64>,)*
        }

        impl Params {
            pub const NAMES: &'static [&'static str] = &[$(stringify!($name)),*];

            pub fn tensors(&self) -> Vec<(&'static str, &DMatrix<f64>)> {
                vec![$((stringify!($name), &self.$name)),*]
            }

            pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut DMatrix<f64>)> {
                vec![$((stringify!($name), &mut self.$name)),*]
            }

            pub fn zeros_like(&self) -> Params {
                Params { $($name: DMatrix::zeros(self.$name.nrows(), self.$name.ncols()),)* }
            }
        }
    };
}

param_set!(
    m2_w, m2_b, m3_w, m3_b, mf_w, mf_b, d1_w, d1_b, r1_w, r1_b, r2_w, r2_b, head_w, head_b, embed, mlp1_w, mlp1_b,
    mlp2_w, mlp2_b,
);

impl Params {
    pub fn len(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|(_, t)| t.iter().copied()).collect()
    }

    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::contract(format!("expected {} parameters, got {}", self.len(), flat.len())));
        }
        let mut at = 0;
        for (_, t) in self.tensors_mut() {
            let n = t.len();
            t.as_mut_slice().copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorModel {
    pub config: EstimatorConfig,
    pub dims: ModelDims,
    pub params: Params,
}

/// Per-joint heatmap logits: row `j`, column `b * w * h + y * w + x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmaps {
    pub batch: usize,
    pub width: usize,
    pub height: usize,
    pub values: DMatrix<f64>,
}

impl Heatmaps {
    /// `(B, N_j, w_h, h_h)`.
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.batch, self.values.nrows(), self.width, self.height)
    }

    pub fn channel(&self, b: usize, j: usize) -> Vec<f64> {
        let n = self.width * self.height;
        self.values.row(j).columns(b * n, n).iter().copied().collect()
    }
}

/// Soft-argmax per channel, scaled from the heatmap grid to image pixels.
pub fn heatmaps_to_joints(h: &Heatmaps, image_width: usize, image_height: usize) -> Vec<Vec<[f64; 2]>> {
    let sx = image_width as f64 / h.width as f64;
    let sy = image_height as f64 / h.height as f64;
    (0..h.batch)
        .map(|b| {
            (0..h.values.nrows())
                .map(|j| {
                    let (_, gx, gy) = soft_argmax(&h.channel(b, j), h.width);
                    [gx * sx, gy * sy]
                })
                .collect()
        })
        .collect()
}

/// Bilinear lookup of `F` at a pixel position, where cell `i` covers
/// pixels `[i, i + 1) * W / w_F`.
#[derive(Debug, Clone)]
pub struct Sampled {
    pub value: DVector<f64>,
    /// `d value / d x` and `d value / d y` in pixels; zero along a clamped axis.
    pub d_dx: DVector<f64>,
    pub d_dy: DVector<f64>,
    pub clamped: bool,
    taps: [(usize, f64); 4],
}

fn feature_tap(x: f64, y: f64, gw: usize, gh: usize, iw: usize, ih: usize) -> (Tap, f64, f64) {
    let kx = gw as f64 / iw as f64;
    let ky = gh as f64 / ih as f64;
    (Tap::new(x * kx - 0.5, y * ky - 0.5, gw, gh), kx, ky)
}

fn sample_columns(f: &DMatrix<f64>, offset: usize, x: f64, y: f64, gw: usize, gh: usize, iw: usize, ih: usize) -> Sampled {
    let (t, kx, ky) = feature_tap(x, y, gw, gh, iw, ih);
    let taps = t.weights(gw);
    let col = |p: usize| f.column(offset + p).into_owned();
    let mut value = DVector::zeros(f.nrows());
    for &(p, w) in &taps {
        value.axpy(w, &f.column(offset + p), 1.0);
    }
    let (c00, c01) = (col(t.y0 * gw + t.x0), col(t.y0 * gw + t.x1));
    let (c10, c11) = (col(t.y1 * gw + t.x0), col(t.y1 * gw + t.x1));
    let dtx = (&c01 - &c00) * (1.0 - t.ty) + (&c11 - &c10) * t.ty;
    let dty = (&c10 - &c00) * (1.0 - t.tx) + (&c11 - &c01) * t.tx;
    let d_dx = if t.inside.0 { dtx * kx } else { DVector::zeros(f.nrows()) };
    let d_dy = if t.inside.1 { dty * ky } else { DVector::zeros(f.nrows()) };
    Sampled {
        value,
        d_dx,
        d_dy,
        clamped: !(t.inside.0 && t.inside.1),
        taps,
    }
}

/// Samples one feature map at pixel `(x, y)` of a `width x height` image.
pub fn sample_feature(f: &FeatureMap, x: f64, y: f64, image_width: usize, image_height: usize) -> Sampled {
    sample_columns(&f.values, 0, x, y, f.width, f.height, image_width, image_height)
}

/// Everything the backward pass reads.
#[derive(Debug, Clone)]
pub struct Forward {
    pub batch: usize,
    /// Row `b * N_j + j`: `(x, y, depth)` in pixels.
    pub joints: Vec<[f64; 3]>,
    pub heatmaps: Heatmaps,
    pub merged: DMatrix<f64>,
    pub clamped: usize,
    cols2: DMatrix<f64>,
    cols3: DMatrix<f64>,
    a2: DMatrix<f64>,
    a3: DMatrix<f64>,
    cat: DMatrix<f64>,
    cols_f: DMatrix<f64>,
    h1: DMatrix<f64>,
    cols_h1: DMatrix<f64>,
    r: DMatrix<f64>,
    cols_r: DMatrix<f64>,
    h: DMatrix<f64>,
    probs: Vec<(Vec<f64>, f64, f64)>,
    samples: Vec<Sampled>,
    z: DMatrix<f64>,
    hidden: DMatrix<f64>,
    residual: bool,
}

fn he(rows: usize, cols: usize, fan_in: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let n = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    DMatrix::from_fn(rows, cols, |_, _| n.sample(rng))
}

fn conv(w: &DMatrix<f64>, b: &DMatrix<f64>, cols: &DMatrix<f64>) -> DMatrix<f64> {
    add_bias(w * cols, &b.column(0).into_owned())
}

fn row_sums(m: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_iterator(m.nrows(), 1, m.row_iter().map(|r| r.sum()))
}

impl EstimatorModel {
    pub fn new(config: EstimatorConfig, dims: ModelDims) -> Result<Self> {
        let c = config.channels;
        if c == 0 || config.mlp_hidden == 0 || dims.joints == 0 {
            return Err(Error::config("estimator channels, hidden width and joint count must be positive"));
        }
        if config.heatmap.contains(&0) || dims.grid.contains(&0) || dims.image.contains(&0) {
            return Err(Error::config("estimator grid, heatmap and image sizes must be positive"));
        }
        let nj = dims.joints;
        let hid = config.mlp_hidden;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let zeros = |r, c| DMatrix::zeros(r, c);
        let params = Params {
            m2_w: he(c, dims.channels_2d * 9, dims.channels_2d * 9, &mut rng),
            m2_b: zeros(c, 1),
            m3_w: he(c, dims.channels_3d * 9, dims.channels_3d * 9, &mut rng),
            m3_b: zeros(c, 1),
            mf_w: he(c, 2 * c, 2 * c, &mut rng),
            mf_b: zeros(c, 1),
            d1_w: he(c, 9 * c, 9 * c, &mut rng),
            d1_b: zeros(c, 1),
            r1_w: he(c, 9 * c, 9 * c, &mut rng),
            r1_b: zeros(c, 1),
            r2_w: zeros(c, 9 * c),
            r2_b: zeros(c, 1),
            head_w: he(nj, c, c, &mut rng),
            head_b: zeros(nj, 1),
            embed: DMatrix::from_fn(nj, 1, |j, _| j as f64 / nj as f64),
            mlp1_w: he(hid, c + 3, c + 3, &mut rng),
            mlp1_b: zeros(hid, 1),
            mlp2_w: zeros(1, hid),
            mlp2_b: zeros(1, 1),
        };
        Ok(EstimatorModel { config, dims, params })
    }

    /// Dimensions for a provider and an image size.
    pub fn dims_for(provider: &dyn FeatureProvider, joints: usize, image: [usize; 2]) -> Result<ModelDims> {
        let (c2, c3) = provider.channels();
        let (gw, gh) = provider.grid(image[0], image[1])?;
        Ok(ModelDims {
            joints,
            channels_2d: c2,
            channels_3d: c3,
            grid: [gw, gh],
            image,
        })
    }

    fn grid(&self, batch: usize) -> Grid {
        Grid {
            batch,
            height: self.dims.grid[1],
            width: self.dims.grid[0],
        }
    }

    fn check_pair(&self, f2d: &FeatureMap, f3d: &FeatureMap) -> Result<()> {
        f2d.check()?;
        f3d.check()?;
        if (f2d.width, f2d.height) != (f3d.width, f3d.height) {
            return Err(Error::contract(format!(
                "feature grids differ: {}x{} vs {}x{}",
                f2d.width, f2d.height, f3d.width, f3d.height
            )));
        }
        if [f2d.width, f2d.height] != self.dims.grid
            || f2d.channels() != self.dims.channels_2d
            || f3d.channels() != self.dims.channels_3d
        {
            return Err(Error::contract(format!(
                "features ({} + {} channels on {}x{}) do not match the model ({} + {} on {:?})",
                f2d.channels(),
                f3d.channels(),
                f2d.width,
                f2d.height,
                self.dims.channels_2d,
                self.dims.channels_3d,
                self.dims.grid
            )));
        }
        Ok(())
    }

    /// Merged feature `F` for one image.
    pub fn merge_features(&self, f2d: &FeatureMap, f3d: &FeatureMap) -> Result<FeatureMap> {
        self.check_pair(f2d, f3d)?;
        let g = self.grid(1);
        let p = &self.params;
        let a2 = relu(&conv(&p.m2_w, &p.m2_b, &im2col3(&f2d.values, g)));
        let a3 = relu(&conv(&p.m3_w, &p.m3_b, &im2col3(&f3d.values, g)));
        let mut cat = DMatrix::zeros(a2.nrows() + a3.nrows(), a2.ncols());
        cat.rows_mut(0, a2.nrows()).copy_from(&a2);
        cat.rows_mut(a2.nrows(), a3.nrows()).copy_from(&a3);
        Ok(FeatureMap {
            width: f2d.width,
            height: f2d.height,
            values: conv(&p.mf_w, &p.mf_b, &cat),
            source: FeatureSource::Merged,
        })
    }

    /// Heatmaps from merged features; `residual = false` drops the residual branch.
    pub fn decode_heatmaps(&self, merged: &[FeatureMap], residual: bool) -> Result<Heatmaps> {
        let b = merged.len();
        let mut f = DMatrix::zeros(self.config.channels, b * self.grid(1).positions());
        for (i, m) in merged.iter().enumerate() {
            if m.values.shape() != (self.config.channels, self.grid(1).positions()) {
                return Err(Error::contract("merged feature map does not match the decoder"));
            }
            f.columns_mut(i * m.values.ncols(), m.values.ncols()).copy_from(&m.values);
        }
        let (_, _, _, _, _, h) = self.decode(&f, b, residual);
        Ok(self.heatmaps(&h, b))
    }

    #[allow(clippy::type_complexity)]
    fn decode(
        &self,
        f: &DMatrix<f64>,
        batch: usize,
        residual: bool,
    ) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let g = self.grid(batch);
        let p = &self.params;
        let cols_f = im2col3(f, g);
        let h1 = relu(&conv(&p.d1_w, &p.d1_b, &cols_f));
        let cols_h1 = im2col3(&h1, g);
        let r = relu(&conv(&p.r1_w, &p.r1_b, &cols_h1));
        let cols_r = im2col3(&r, g);
        let h = if residual {
            &h1 + conv(&p.r2_w, &p.r2_b, &cols_r)
        } else {
            h1.clone()
        };
        (cols_f, h1, cols_h1, r, cols_r, h)
    }

    fn heatmaps(&self, h: &DMatrix<f64>, batch: usize) -> Heatmaps {
        let [hw, hh] = self.config.heatmap;
        let [gw, gh] = self.dims.grid;
        let logits = conv(&self.params.head_w, &self.params.head_b, h);
        let taps = resize_taps(gh, gw, hh, hw);
        Heatmaps {
            batch,
            width: hw,
            height: hh,
            values: resize(&logits, batch, gw * gh, &taps),
        }
    }

    /// Depth MLP over rows of `[f, x, y, e]`; `x, y` in pixels. Returns NDC depth.
    pub fn estimate_depth(&self, f_processed: &DMatrix<f64>, j_processed: &DMatrix<f64>) -> Result<DVector<f64>> {
        if f_processed.nrows() != j_processed.nrows() {
            return Err(Error::contract(format!(
                "{} feature rows but {} joint rows",
                f_processed.nrows(),
                j_processed.nrows()
            )));
        }
        if f_processed.ncols() != self.config.channels || j_processed.ncols() != 3 {
            return Err(Error::contract("depth MLP expects C feature columns and 3 joint columns"));
        }
        let z = self.mlp_input(f_processed.transpose(), j_processed);
        let (_, ndc) = self.mlp(&z);
        Ok(ndc.row(0).transpose())
    }

    fn mlp_input(&self, f: DMatrix<f64>, j: &DMatrix<f64>) -> DMatrix<f64> {
        let c = self.config.channels;
        let [iw, ih] = self.dims.image;
        let mut z = DMatrix::zeros(c + 3, f.ncols());
        z.rows_mut(0, c).copy_from(&f);
        for r in 0..f.ncols() {
            z[(c, r)] = 2.0 * j[(r, 0)] / iw as f64 - 1.0;
            z[(c + 1, r)] = 2.0 * j[(r, 1)] / ih as f64 - 1.0;
            z[(c + 2, r)] = j[(r, 2)];
        }
        z
    }

    fn mlp(&self, z: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let p = &self.params;
        let hidden = relu(&conv(&p.mlp1_w, &p.mlp1_b, z));
        let out = conv(&p.mlp2_w, &p.mlp2_b, &hidden);
        (hidden, out)
    }

    fn depth_scale(&self) -> f64 {
        self.dims.image[1] as f64 / 2.0
    }

    /// Full forward pass over stacked features (`channels x (B * grid)`).
    pub fn forward(&self, f2d: &DMatrix<f64>, f3d: &DMatrix<f64>, batch: usize, residual: bool) -> Result<Forward> {
        let g = self.grid(batch);
        if f2d.shape() != (self.dims.channels_2d, g.columns()) || f3d.shape() != (self.dims.channels_3d, g.columns()) {
            return Err(Error::contract("stacked features do not match the model dimensions"));
        }
        let p = &self.params;
        let c = self.config.channels;
        let nj = self.dims.joints;
        let [iw, ih] = self.dims.image;
        let [gw, gh] = self.dims.grid;
        let [hw, hh] = self.config.heatmap;

        let cols2 = im2col3(f2d, g);
        let cols3 = im2col3(f3d, g);
        let a2 = relu(&conv(&p.m2_w, &p.m2_b, &cols2));
        let a3 = relu(&conv(&p.m3_w, &p.m3_b, &cols3));
        let mut cat = DMatrix::zeros(2 * c, g.columns());
        cat.rows_mut(0, c).copy_from(&a2);
        cat.rows_mut(c, c).copy_from(&a3);
        let merged = conv(&p.mf_w, &p.mf_b, &cat);
        let (cols_f, h1, cols_h1, r, cols_r, h) = self.decode(&merged, batch, residual);
        let heatmaps = self.heatmaps(&h, batch);

        let mut probs = Vec::with_capacity(batch * nj);
        let mut samples = Vec::with_capacity(batch * nj);
        let mut fsel = DMatrix::zeros(c, batch * nj);
        let mut jproc = DMatrix::zeros(batch * nj, 3);
        let mut clamped = 0;
        for b in 0..batch {
            for j in 0..nj {
                let (pr, gx, gy) = soft_argmax(&heatmaps.channel(b, j), hw);
                let x = gx * iw as f64 / hw as f64;
                let y = gy * ih as f64 / hh as f64;
                let s = sample_columns(&merged, b * gw * gh, x, y, gw, gh, iw, ih);
                clamped += s.clamped as usize;
                let row = b * nj + j;
                fsel.set_column(row, &s.value);
                jproc[(row, 0)] = x;
                jproc[(row, 1)] = y;
                jproc[(row, 2)] = p.embed[(j, 0)];
                probs.push((pr, gx, gy));
                samples.push(s);
            }
        }
        let z = self.mlp_input(fsel, &jproc);
        let (hidden, ndc) = self.mlp(&z);
        let joints = (0..batch * nj)
            .map(|r| [jproc[(r, 0)], jproc[(r, 1)], ndc[(0, r)] * self.depth_scale()])
            .collect();
        Ok(Forward {
            batch,
            joints,
            heatmaps,
            merged,
            clamped,
            cols2,
            cols3,
            a2,
            a3,
            cat,
            cols_f,
            h1,
            cols_h1,
            r,
            cols_r,
            h,
            probs,
            samples,
            z,
            hidden,
            residual,
        })
    }

    /// Parameter gradients given `d loss / d joints` (same layout as `Forward::joints`).
    pub fn backward(&self, fw: &Forward, d_joints: &[[f64; 3]]) -> Result<Params> {
        let nj = self.dims.joints;
        let batch = fw.batch;
        if d_joints.len() != batch * nj {
            return Err(Error::contract("joint gradient has the wrong length"));
        }
        let p = &self.params;
        let c = self.config.channels;
        let g = self.grid(batch);
        let [iw, ih] = self.dims.image;
        let [gw, gh] = self.dims.grid;
        let [hw, hh] = self.config.heatmap;
        let mut grad = p.zeros_like();

        // Depth MLP.
        let dndc = DMatrix::from_fn(1, batch * nj, |_, r| d_joints[r][2] * self.depth_scale());
        grad.mlp2_w = &dndc * fw.hidden.transpose();
        grad.mlp2_b = row_sums(&dndc);
        let dhid = relu_backward(&(p.mlp2_w.transpose() * &dndc), &fw.hidden);
        grad.mlp1_w = &dhid * fw.z.transpose();
        grad.mlp1_b = row_sums(&dhid);
        let dz = p.mlp1_w.transpose() * &dhid;

        // Sampling and soft-argmax.
        let mut d_merged = DMatrix::zeros(c, g.columns());
        let mut d_heat = DMatrix::zeros(nj, batch * hw * hh);
        for b in 0..batch {
            for j in 0..nj {
                let row = b * nj + j;
                let s = &fw.samples[row];
                let df: DVector<f64> = dz.view((0, row), (c, 1)).column(0).into_owned();
                for &(pos, w) in &s.taps {
                    let mut col = d_merged.column_mut(b * gw * gh + pos);
                    col.axpy(w, &df, 1.0);
                }
                grad.embed[(j, 0)] += dz[(c + 2, row)];
                let dx = d_joints[row][0] + dz[(c, row)] * 2.0 / iw as f64 + s.d_dx.dot(&df);
                let dy = d_joints[row][1] + dz[(c + 1, row)] * 2.0 / ih as f64 + s.d_dy.dot(&df);
                let (pr, gx, gy) = &fw.probs[row];
                let dl = soft_argmax_backward(
                    pr,
                    hw,
                    *gx,
                    *gy,
                    dx * iw as f64 / hw as f64,
                    dy * ih as f64 / hh as f64,
                );
                let off = b * hw * hh;
                for (i, v) in dl.into_iter().enumerate() {
                    d_heat[(j, off + i)] = v;
                }
            }
        }

        // Head and decoder.
        let taps = resize_taps(gh, gw, hh, hw);
        let dlogits = resize_backward(&d_heat, batch, gw * gh, &taps);
        grad.head_w = &dlogits * fw.h.transpose();
        grad.head_b = row_sums(&dlogits);
        let dh = p.head_w.transpose() * &dlogits;
        let mut dh1 = dh.clone();
        if fw.residual {
            grad.r2_w = &dh * fw.cols_r.transpose();
            grad.r2_b = row_sums(&dh);
            let dr = col2im3(&(p.r2_w.transpose() * &dh), c, g);
            let dr = relu_backward(&dr, &fw.r);
            grad.r1_w = &dr * fw.cols_h1.transpose();
            grad.r1_b = row_sums(&dr);
            dh1 += col2im3(&(p.r1_w.transpose() * &dr), c, g);
        }
        let dh1 = relu_backward(&dh1, &fw.h1);
        grad.d1_w = &dh1 * fw.cols_f.transpose();
        grad.d1_b = row_sums(&dh1);
        d_merged += col2im3(&(p.d1_w.transpose() * &dh1), c, g);

        // Merger.
        grad.mf_w = &d_merged * fw.cat.transpose();
        grad.mf_b = row_sums(&d_merged);
        let dcat = p.mf_w.transpose() * &d_merged;
        let da2 = relu_backward(&dcat.rows(0, c).into_owned(), &fw.a2);
        let da3 = relu_backward(&dcat.rows(c, c).into_owned(), &fw.a3);
        grad.m2_w = &da2 * fw.cols2.transpose();
        grad.m2_b = row_sums(&da2);
        grad.m3_w = &da3 * fw.cols3.transpose();
        grad.m3_b = row_sums(&da3);
        Ok(grad)
    }

    /// Stacks per-image feature pairs into batch matrices.
    pub fn stack(&self, pairs: &[&(FeatureMap, FeatureMap)]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let n = self.grid(1).positions();
        let mut f2 = DMatrix::zeros(self.dims.channels_2d, pairs.len() * n);
        let mut f3 = DMatrix::zeros(self.dims.channels_3d, pairs.len() * n);
        for (i, (a, b)) in pairs.iter().map(|p| (&p.0, &p.1)).enumerate() {
            self.check_pair(a, b)?;
            f2.columns_mut(i * n, n).copy_from(&a.values);
            f3.columns_mut(i * n, n).copy_from(&b.values);
        }
        Ok((f2, f3))
    }

    /// Screen-space joints for one image.
    pub fn estimate(&self, provider: &dyn FeatureProvider, image: &Image) -> Result<JointEstimate> {
        if [image.width, image.height] != self.dims.image {
            return Err(Error::contract(format!(
                "image is {}x{}, the estimator was built for {:?}",
                image.width, image.height, self.dims.image
            )));
        }
        let pair = provide_checked(provider, image)?;
        self.estimate_features(&pair)
    }

    pub fn estimate_features(&self, pair: &(FeatureMap, FeatureMap)) -> Result<JointEstimate> {
        let (f2, f3) = self.stack(&[pair])?;
        let fw = self.forward(&f2, &f3, 1, true)?;
        Ok(JointEstimate {
            joints: fw
                .joints
                .iter()
                .map(|j| ScreenJoint {
                    x: j[0],
                    y: j[1],
                    depth: j[2],
                })
                .collect(),
            clamped: fw.clamped,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointEstimate {
    pub joints: Vec<ScreenJoint>,
    /// Joints whose feature lookup was clamped to the grid border.
    pub clamped: usize,
}

/// Mean squared error over every coordinate and its gradient.
pub fn joint_loss(pred: &[[f64; 3]], target: &[[f64; 3]]) -> (f64, Vec<[f64; 3]>) {
    let n = (pred.len() * 3).max(1) as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let mut g = [0.0; 3];
            for k in 0..3 {
                let d = p[k] - t[k];
                loss += d * d;
                g[k] = 2.0 * d / n;
            }
            g
        })
        .collect();
    (loss / n, grad)
}
