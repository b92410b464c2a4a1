//! Floating-point images in `[0, 1]`, row-major with interleaved channels.

use std::path::Path;

use crate::error::{Error, Result};

/// Rec. 601 luma weights.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Image {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::contract(format!(
                "image data has {} values, expected {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = self.index(x, y, c);
        self.data[i] = v;
    }

    pub fn same_shape(&self, o: &Image) -> bool {
        self.width == o.width && self.height == o.height && self.channels == o.channels
    }

    /// Single-channel luminance; grayscale images are returned unchanged.
    pub fn luminance(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|px| px.iter().zip(LUMA).map(|(v, w)| v * w).sum())
            .collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    pub fn flip_horizontal(&self) -> Image {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..self.channels {
                    out.set(self.width - 1 - x, y, c, self.get(x, y, c));
                }
            }
        }
        out
    }

    pub fn mean_abs_diff(&self, o: &Image) -> Result<f64> {
        if !self.same_shape(o) {
            return Err(Error::contract("image shapes differ"));
        }
        let s: f64 = self.data.iter().zip(&o.data).map(|(a, b)| (a - b).abs()).sum();
        Ok(s / self.data.len() as f64)
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    /// Writes an 8-bit grayscale or RGB PNG.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let color = match self.channels {
            1 => image::ExtendedColorType::L8,
            3 => image::ExtendedColorType::Rgb8,
            c => return Err(Error::Image(format!("cannot write {c}-channel PNG"))),
        };
        image::save_buffer_with_format(
            path,
            &self.to_u8(),
            self.width as u32,
            self.height as u32,
            color,
            image::ImageFormat::Png,
        )
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        let dynimg = image::open(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
        let (w, h) = (dynimg.width(), dynimg.height());
        let (channels, raw) = match dynimg.color().channel_count() {
            1 | 2 => (1, dynimg.into_luma8().into_raw()),
            _ => (3, dynimg.into_rgb8().into_raw()),
        };
        Image::from_data(
            w as usize,
            h as usize,
            channels,
            raw.into_iter().map(|v| v as f64 / 255.0).collect(),
        )
    }
}
