mod common;

use std::collections::BTreeMap;
use std::path::PathBuf;

use anymole_core::image::Image;
use anymole_diffusion::backend::{Conditioning, VideoBackend};
use anymole_diffusion::guidance::{generate_segment, inpaint_replace, GuidanceSpec};
use anymole_diffusion::latent::LatentVideo;
use anymole_diffusion::stages::{
    coarse_stage, fine_stage, hold_coarse, plan_two_stage, Provenance, StageInputs, TICKS_PER_SECOND,
};
use anymole_diffusion::toy::ToyBackend;
use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Summary of a latent video stored as a golden file.
#[derive(Debug, Serialize, Deserialize)]
struct Golden {
    len: usize,
    sum: f64,
    sum_sq: f64,
    samples: Vec<f64>,
}

impl Golden {
    fn of(values: &[f64]) -> Self {
        Golden {
            len: values.len(),
            sum: values.iter().sum(),
            sum_sq: values.iter().map(|v| v * v).sum(),
            samples: values.iter().step_by(values.len() / 64).copied().collect(),
        }
    }
}

fn check_golden(name: &str, values: &[f64]) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    let got = Golden::of(values);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, serde_json::to_string_pretty(&got).unwrap()).unwrap();
        eprintln!("wrote golden {}", path.display());
        return;
    }
    let text = std::fs::read_to_string(&path)
        .unwrap_or_else(|_| panic!("missing {}; rerun with UPDATE_GOLDEN=1", path.display()));
    let want: Golden = serde_json::from_str(&text).unwrap();
    assert_eq!(got.len, want.len);
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + b.abs());
    assert!(close(got.sum, want.sum), "sum {} vs {}", got.sum, want.sum);
    assert!(close(got.sum_sq, want.sum_sq), "sum_sq {} vs {}", got.sum_sq, want.sum_sq);
    for (a, b) in got.samples.iter().zip(&want.samples) {
        assert!(close(*a, *b), "sample {a} vs {b}");
    }
}

fn model() -> ToyBackend {
    ToyBackend::new(gray32(21)).unwrap()
}

#[test]
fn unguided_reverse_chain_matches_golden() {
    let m = model();
    let cfg = &m.config;
    let (first, last) = (blob(cfg, 8.0, 8.0), blob(cfg, 24.0, 20.0));
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let t_max = m.schedule().t_max;
    let mut z = LatentVideo::noise(m.latent_shape(), t_max, &mut rng);
    for t in (1..=t_max).rev() {
        let cond = Conditioning { first: &first, last: &last, text: "walk", fps: 15, t };
        z = m.denoise_step(&z, &cond).unwrap();
    }
    assert_eq!(z.t, 0);
    check_golden("reverse_chain.json", &z.flat());
}

#[test]
fn endpoint_only_segment_matches_golden() {
    let m = model();
    let cfg = &m.config;
    let (first, last) = (blob(cfg, 8.0, 8.0), blob(cfg, 24.0, 20.0));
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let seg = generate_segment(&m, &first, &last, &GuidanceSpec::default(), "walk", 15, &mut rng).unwrap();
    check_golden("segment.json", &seg.latents.flat());
    assert!(mean_abs(&seg.frames[0], &first) < 1e-9);
    assert!(mean_abs(&seg.frames[15], &last) < 1e-9);
}

#[test]
fn inpaint_replace_locality() {
    let m = model();
    let cfg = &m.config;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let z = LatentVideo::noise(m.latent_shape(), 30, &mut rng);
    let empty = inpaint_replace(&z, &GuidanceSpec::default(), 30, m.schedule(), &mut rng).unwrap();
    assert_eq!(empty, z);

    let imgs: Vec<Image> = (1..=3).map(|i| blob(cfg, 5.0 * i as f64, 12.0)).collect();
    let map: BTreeMap<usize, &Image> = (1..=3).zip(imgs.iter()).collect();
    let spec = GuidanceSpec::from_images(&m, &map).unwrap();
    let out = inpaint_replace(&z, &spec, 30, m.schedule(), &mut rng).unwrap();
    for i in [0, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15] {
        assert_eq!(out.frames[i], z.frames[i], "frame {i} touched");
    }
    for i in 1..=3 {
        assert_ne!(out.frames[i], z.frames[i]);
    }
    let exact = inpaint_replace(&z, &spec, 0, m.schedule(), &mut rng).unwrap();
    for (i, img) in (1..=3).zip(&imgs) {
        assert_eq!(exact.frames[i], m.encode(img).unwrap());
    }

    let far: BTreeMap<usize, &Image> = [(16, &imgs[0])].into_iter().collect();
    assert!(GuidanceSpec::from_images(&m, &far).is_err());
}

#[test]
fn fully_guided_segment_reproduces_guidance() {
    let m = model();
    let cfg = &m.config;
    let clip = moving_clip(cfg, (6.0, 6.0), (26.0, 24.0), 15);
    let map: BTreeMap<usize, &Image> = clip.frames.iter().enumerate().collect();
    let spec = GuidanceSpec::from_images(&m, &map).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let seg = generate_segment(&m, &clip.frames[0], &clip.frames[15], &spec, "walk", 15, &mut rng).unwrap();
    for (got, want) in seg.frames.iter().zip(&clip.frames) {
        let max = got.data.iter().zip(&want.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(max < 1e-3);
    }
}

#[test]
fn partial_guidance_is_pinned_and_conflicts_rejected() {
    let m = model();
    let cfg = &m.config;
    let clip = moving_clip(cfg, (6.0, 6.0), (26.0, 24.0), 15);
    let map: BTreeMap<usize, &Image> = [3, 7, 8].iter().map(|&i| (i, &clip.frames[i])).collect();
    let spec = GuidanceSpec::from_images(&m, &map).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let seg = generate_segment(&m, &clip.frames[0], &clip.frames[15], &spec, "walk", 15, &mut rng).unwrap();
    for i in [0, 3, 7, 8, 15] {
        assert!(mean_abs(&seg.frames[i], &clip.frames[i]) < 1e-3);
    }
    let clash: BTreeMap<usize, &Image> = [(0, &clip.frames[5])].into_iter().collect();
    let spec = GuidanceSpec::from_images(&m, &clash).unwrap();
    assert!(generate_segment(&m, &clip.frames[0], &clip.frames[15], &spec, "walk", 15, &mut rng).is_err());
}

fn stage_inputs(m: &ToyBackend, total: usize) -> (Vec<(usize, Image)>, Vec<(usize, Image)>) {
    let cfg = &m.config;
    let pos = |tick: usize| {
        let s = tick as f64 / TICKS_PER_SECOND as f64;
        (16.0 + 9.0 * (s * 1.3).cos(), 16.0 + 7.0 * (s * 0.9).sin())
    };
    let context = (0..2 * TICKS_PER_SECOND)
        .map(|t| {
            let (x, y) = pos(t);
            (t, blob(cfg, x, y))
        })
        .collect();
    let keys = (2..=total)
        .map(|s| {
            let t = s * TICKS_PER_SECOND;
            let (x, y) = pos(t);
            (t, blob(cfg, x, y))
        })
        .collect();
    (context, keys)
}

#[test]
fn two_stage_run_follows_plan_and_pins_inputs() {
    let m = model();
    let total = 4;
    let (context, keys) = stage_inputs(&m, total);
    let inputs = StageInputs {
        context: &context,
        keyframes: &keys,
        total_seconds: total,
        text: "walk",
        seed: 17,
    };
    let coarse = coarse_stage(&m, &inputs).unwrap();
    let plan = plan_two_stage(total, 2).unwrap();
    assert_eq!(coarse.plan, plan.coarse);
    assert_eq!(coarse.frames.len(), 5 * total + 1);
    for (tick, img) in &keys {
        let f = coarse.frames.iter().find(|f| f.tick == *tick).unwrap();
        assert_eq!(f.provenance, Provenance::Keyframe);
        assert_eq!(&f.image, img);
    }

    let fine = fine_stage(&m, &coarse.frames, &inputs).unwrap();
    assert_eq!(fine.plan, plan.fine);
    assert_eq!(fine.frames.len(), 15 * total + 1);
    assert_eq!(coarse.calls + fine.calls, plan.total_calls);
    // Generated coarse frames reappear in the fine video.
    for c in coarse.frames.iter().filter(|f| matches!(f.provenance, Provenance::Coarse { .. })) {
        let f = fine.frames.iter().find(|f| f.tick == c.tick).unwrap();
        assert!(mean_abs(&f.image, &c.image) < 1e-3, "tick {}", c.tick);
    }

    let again = coarse_stage(&m, &inputs).unwrap();
    for (a, b) in coarse.frames.iter().zip(&again.frames) {
        assert_eq!(a.image, b.image);
    }

    let held = hold_coarse(&coarse.frames, total);
    assert_eq!(held.len(), 15 * total + 1);
    assert_eq!(held[1].provenance, Provenance::Held { from_tick: 0 });
}

#[test]
fn missing_endpoint_reports_segment() {
    let m = model();
    let (context, mut keys) = stage_inputs(&m, 4);
    keys.pop();
    let inputs = StageInputs {
        context: &context,
        keyframes: &keys,
        total_seconds: 4,
        text: "walk",
        seed: 1,
    };
    let err = coarse_stage(&m, &inputs).unwrap_err().to_string();
    assert!(err.contains("coarse segment 1"), "{err}");
}
