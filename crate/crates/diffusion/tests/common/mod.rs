#![allow(dead_code)]

use anymole_core::image::Image;
use anymole_diffusion::adapt::VideoClip;
use anymole_diffusion::toy::ToyConfig;

pub fn gray32(seed: u64) -> ToyConfig {
    ToyConfig {
        image_width: 32,
        image_height: 32,
        image_channels: 1,
        patch: 2,
        seed,
    }
}

/// Soft blob centered at `(cx, cy)`.
pub fn blob(cfg: &ToyConfig, cx: f64, cy: f64) -> Image {
    let mut img = Image::filled(cfg.image_width, cfg.image_height, cfg.image_channels, 0.0);
    for y in 0..cfg.image_height {
        for x in 0..cfg.image_width {
            let d2 = (x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2);
            for c in 0..cfg.image_channels {
                img.set(x, y, c, 0.8 * (-d2 / 18.0).exp());
            }
        }
    }
    img
}

/// A blob moving along a line, 16 frames.
pub fn moving_clip(cfg: &ToyConfig, from: (f64, f64), to: (f64, f64), fps: u32) -> VideoClip {
    let frames = (0..16)
        .map(|i| {
            let s = i as f64 / 15.0;
            blob(cfg, from.0 + s * (to.0 - from.0), from.1 + s * (to.1 - from.1))
        })
        .collect();
    VideoClip { frames, fps }
}

pub fn synthetic_clips(cfg: &ToyConfig, n: usize) -> Vec<VideoClip> {
    let fps = [30, 15, 10];
    (0..n)
        .map(|i| {
            let a = i as f64 * 0.7;
            moving_clip(
                cfg,
                (16.0 + 8.0 * a.cos(), 16.0 + 8.0 * a.sin()),
                (16.0 - 6.0 * a.sin(), 16.0 + 6.0 * a.cos()),
                fps[i % 3],
            )
        })
        .collect()
}

pub fn mean_abs(a: &Image, b: &Image) -> f64 {
    a.mean_abs_diff(b).unwrap()
}
