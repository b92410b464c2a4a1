//! Latent inpainting: guided frames are overwritten with noised encodings of
//! their guidance images throughout the reverse chain.

use std::collections::BTreeMap;

use anymole_core::error::{Error, Result};
use anymole_core::image::Image;
use nalgebra::DMatrix;
use rand::Rng;

use crate::backend::{Conditioning, VideoBackend};
use crate::latent::{LatentVideo, SEGMENT_FRAMES};
use crate::schedule::Schedule;

/// Segment frame index -> encoded guidance latent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GuidanceSpec {
    pub latents: BTreeMap<usize, DMatrix<f64>>,
}

impl GuidanceSpec {
    pub fn from_images<B: VideoBackend + ?Sized>(model: &B, images: &BTreeMap<usize, &Image>) -> Result<Self> {
        let mut latents = BTreeMap::new();
        for (&i, img) in images {
            latents.insert(i, model.encode(img)?);
        }
        let spec = GuidanceSpec { latents };
        spec.check()?;
        Ok(spec)
    }

    pub fn check(&self) -> Result<()> {
        if let Some((&i, _)) = self.latents.range(SEGMENT_FRAMES..).next() {
            return Err(Error::contract(format!("guided index {i} outside 0..{SEGMENT_FRAMES}")));
        }
        Ok(())
    }

    pub fn indices(&self) -> Vec<usize> {
        self.latents.keys().copied().collect()
    }
}

/// Overwrites guided frames with `forward_noise(latent, t)`; other frames are untouched.
pub fn inpaint_replace<R: Rng + ?Sized>(
    z: &LatentVideo,
    spec: &GuidanceSpec,
    t: usize,
    schedule: &Schedule,
    rng: &mut R,
) -> Result<LatentVideo> {
    spec.check()?;
    let mut out = z.clone();
    for (&i, latent) in &spec.latents {
        z.shape.check(latent)?;
        out.frames[i] = schedule.forward_noise(latent, t, rng)?.0;
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Segment {
    pub frames: Vec<Image>,
    pub latents: LatentVideo,
}

/// Full guided reverse chain for one 16-frame segment. Frames 0 and 15 are
/// always guided by `first` and `last`; a spec that pins them to different
/// content is rejected.
pub fn generate_segment<B: VideoBackend + ?Sized, R: Rng + ?Sized>(
    model: &B,
    first: &Image,
    last: &Image,
    spec: &GuidanceSpec,
    text: &str,
    fps: u32,
    rng: &mut R,
) -> Result<Segment> {
    model.check_fps(fps)?;
    spec.check()?;
    let mut full = spec.clone();
    for (i, img) in [(0, first), (SEGMENT_FRAMES - 1, last)] {
        let enc = model.encode(img)?;
        if let Some(existing) = full.latents.get(&i) {
            if *existing != enc {
                return Err(Error::contract(format!(
                    "guidance for frame {i} conflicts with the segment endpoint image"
                )));
            }
        }
        full.latents.insert(i, enc);
    }
    let schedule = model.schedule();
    let t_max = schedule.t_max;
    let mut z = LatentVideo::noise(model.latent_shape(), t_max, rng);
    z = inpaint_replace(&z, &full, t_max, schedule, rng)?;
    for t in (1..=t_max).rev() {
        let cond = Conditioning {
            first,
            last,
            text,
            fps,
            t,
        };
        z = model.denoise_step(&z, &cond)?;
        z = inpaint_replace(&z, &full, t - 1, schedule, rng)?;
    }
    let frames = z.frames.iter().map(|f| model.decode(f)).collect::<Result<_>>()?;
    Ok(Segment { frames, latents: z })
}
