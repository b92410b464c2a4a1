//! Batched layers with explicit backward passes.
//!
//! A batch of maps is a `channels x (batch * height * width)` matrix; column
//! `b * h * w + y * w + x` holds the channel vector at `(x, y)` of item `b`.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
}

impl Grid {
    pub fn positions(&self) -> usize {
        self.height * self.width
    }

    pub fn columns(&self) -> usize {
        self.batch * self.positions()
    }
}

/// Rows `i * 9 + ky * 3 + kx` hold input channel `i` shifted by `(kx - 1, ky - 1)`, zero padded.
pub fn im2col3(x: &DMatrix<f64>, g: Grid) -> DMatrix<f64> {
    let c = x.nrows();
    let mut cols = DMatrix::zeros(c * 9, g.columns());
    let (h, w) = (g.height as isize, g.width as isize);
    for b in 0..g.batch {
        let base = b * g.positions();
        for y in 0..h {
            for xx in 0..w {
                let col = base + (y * w + xx) as usize;
                for ky in 0..3isize {
                    let sy = y + ky - 1;
                    if sy < 0 || sy >= h {
                        continue;
                    }
                    for kx in 0..3isize {
                        let sx = xx + kx - 1;
                        if sx < 0 || sx >= w {
                            continue;
                        }
                        let src = base + (sy * w + sx) as usize;
                        let k = (ky * 3 + kx) as usize;
                        for i in 0..c {
                            cols[(i * 9 + k, col)] = x[(i, src)];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of `im2col3`.
pub fn col2im3(cols: &DMatrix<f64>, channels: usize, g: Grid) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(channels, g.columns());
    let (h, w) = (g.height as isize, g.width as isize);
    for b in 0..g.batch {
        let base = b * g.positions();
        for y in 0..h {
            for xx in 0..w {
                let col = base + (y * w + xx) as usize;
                for ky in 0..3isize {
                    let sy = y + ky - 1;
                    if sy < 0 || sy >= h {
                        continue;
                    }
                    for kx in 0..3isize {
                        let sx = xx + kx - 1;
                        if sx < 0 || sx >= w {
                            continue;
                        }
                        let src = base + (sy * w + sx) as usize;
                        let k = (ky * 3 + kx) as usize;
                        for i in 0..channels {
                            x[(i, src)] += cols[(i * 9 + k, col)];
                        }
                    }
                }
            }
        }
    }
    x
}

pub fn add_bias(mut y: DMatrix<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    for mut col in y.column_iter_mut() {
        col += b;
    }
    y
}

pub fn relu(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.map(|v| v.max(0.0))
}

/// Gradient through ReLU given its output.
pub fn relu_backward(dy: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    dy.zip_map(y, |d, v| if v > 0.0 { d } else { 0.0 })
}

/// Bilinear resize weights, half-pixel centers, edge clamped.
/// For each output position: up to four `(source position, weight)` pairs.
pub fn resize_taps(src_h: usize, src_w: usize, dst_h: usize, dst_w: usize) -> Vec<[(usize, f64); 4]> {
    let axis = |dst: usize, n_dst: usize, n_src: usize| -> (usize, usize, f64) {
        let s = ((dst as f64 + 0.5) * n_src as f64 / n_dst as f64 - 0.5).clamp(0.0, (n_src - 1) as f64);
        let i0 = (s.floor() as usize).min(n_src.saturating_sub(2));
        let i1 = (i0 + 1).min(n_src - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut taps = Vec::with_capacity(dst_h * dst_w);
    for y in 0..dst_h {
        let (y0, y1, ty) = axis(y, dst_h, src_h);
        for x in 0..dst_w {
            let (x0, x1, tx) = axis(x, dst_w, src_w);
            taps.push([
                (y0 * src_w + x0, (1.0 - ty) * (1.0 - tx)),
                (y0 * src_w + x1, (1.0 - ty) * tx),
                (y1 * src_w + x0, ty * (1.0 - tx)),
                (y1 * src_w + x1, ty * tx),
            ]);
        }
    }
    taps
}

pub fn resize(x: &DMatrix<f64>, batch: usize, src_positions: usize, taps: &[[(usize, f64); 4]]) -> DMatrix<f64> {
    let dst = taps.len();
    let mut out = DMatrix::zeros(x.nrows(), batch * dst);
    for b in 0..batch {
        for (p, tap) in taps.iter().enumerate() {
            for &(s, wgt) in tap {
                if wgt == 0.0 {
                    continue;
                }
                for r in 0..x.nrows() {
                    out[(r, b * dst + p)] += wgt * x[(r, b * src_positions + s)];
                }
            }
        }
    }
    out
}

pub fn resize_backward(dy: &DMatrix<f64>, batch: usize, src_positions: usize, taps: &[[(usize, f64); 4]]) -> DMatrix<f64> {
    let dst = taps.len();
    let mut dx = DMatrix::zeros(dy.nrows(), batch * src_positions);
    for b in 0..batch {
        for (p, tap) in taps.iter().enumerate() {
            for &(s, wgt) in tap {
                if wgt == 0.0 {
                    continue;
                }
                for r in 0..dy.nrows() {
                    dx[(r, b * src_positions + s)] += wgt * dy[(r, b * dst + p)];
                }
            }
        }
    }
    dx
}

/// Softmax-weighted mean of cell centers over one heatmap channel.
/// Returns the probabilities and the expected `(gx, gy)` in grid units.
pub fn soft_argmax(logits: &[f64], w: usize) -> (Vec<f64>, f64, f64) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    let (mut gx, mut gy) = (0.0, 0.0);
    for (i, pi) in p.iter().enumerate() {
        gx += pi * ((i % w) as f64 + 0.5);
        gy += pi * ((i / w) as f64 + 0.5);
    }
    (p, gx, gy)
}

/// Logit gradient of a soft-argmax given gradients on its grid output.
pub fn soft_argmax_backward(p: &[f64], w: usize, gx: f64, gy: f64, dgx: f64, dgy: f64) -> Vec<f64> {
    p.iter()
        .enumerate()
        .map(|(i, pi)| pi * (dgx * ((i % w) as f64 + 0.5 - gx) + dgy * ((i / w) as f64 + 0.5 - gy)))
        .collect()
}

/// Bilinear lookup geometry for a continuous grid coordinate.
#[derive(Debug, Clone, Copy)]
pub struct Tap {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
    pub tx: f64,
    pub ty: f64,
    /// Whether each axis stayed inside the grid (gradient flows).
    pub inside: (bool, bool),
}

impl Tap {
    /// `fx, fy` in cell units where cell `i` is centered at `i`.
    pub fn new(fx: f64, fy: f64, w: usize, h: usize) -> Tap {
        let axis = |f: f64, n: usize| -> (usize, usize, f64, bool) {
            let hi = (n - 1) as f64;
            let inside = (0.0..=hi).contains(&f);
            let c = f.clamp(0.0, hi);
            let i0 = (c.floor() as usize).min(n.saturating_sub(2));
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, c - i0 as f64, inside)
        };
        let (x0, x1, tx, ix) = axis(fx, w);
        let (y0, y1, ty, iy) = axis(fy, h);
        Tap {
            x0,
            x1,
            y0,
            y1,
            tx,
            ty,
            inside: (ix, iy),
        }
    }

    pub fn weights(&self, w: usize) -> [(usize, f64); 4] {
        [
            (self.y0 * w + self.x0, (1.0 - self.ty) * (1.0 - self.tx)),
            (self.y0 * w + self.x1, (1.0 - self.ty) * self.tx),
            (self.y1 * w + self.x0, self.ty * (1.0 - self.tx)),
            (self.y1 * w + self.x1, self.ty * self.tx),
        ]
    }
}
