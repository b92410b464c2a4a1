//! End-to-end checks on rendered toy-scene frames.

use std::path::PathBuf;

use anymole_core::render::render;
use anymole_core::scene::toy_scene;
use anymole_core::{CameraConfig, CameraParams, Image, RenderStyle, View};
use anymole_estimator::checkpoint;
use anymole_estimator::*;
use serde::{Deserialize, Serialize};

fn cameras() -> Vec<(View, CameraParams)> {
    let cc = CameraConfig {
        view: "front".into(),
        distance: 5.0,
        scale: 16.0,
        image: [64, 64],
        depth_range: [-6.5, -3.5],
    };
    let c = toy_scene().center;
    View::ALL.iter().map(|v| (*v, cc.build_view(*v, &c).unwrap())).collect()
}

fn provider() -> SyntheticProvider {
    SyntheticProvider::new(SyntheticConfig::default(), 3).unwrap()
}

fn frame(view: View, f: usize) -> Image {
    let s = toy_scene();
    let cam = cameras().into_iter().find(|(v, _)| *v == view).unwrap().1;
    render(&s.motion.skeleton, &s.motion.poses[f], &cam, &RenderStyle::default()).unwrap()
}

#[test]
fn provider_separates_a_hundred_frames() {
    let p = provider();
    let feats: Vec<_> = (0..100).map(|f| p.provide(&frame(View::Front, f)).unwrap()).collect();
    for i in 0..feats.len() {
        for j in i + 1..feats.len() {
            let d2 = (&feats[i].0.values - &feats[j].0.values).amax();
            let d3 = (&feats[i].1.values - &feats[j].1.values).amax();
            assert!(d2 > 0.0 && d3 > 0.0, "frames {i} and {j} collide");
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Golden {
    joints: Vec<[f64; 3]>,
    heatmap_sum: f64,
}

#[test]
fn seeded_forward_matches_golden() {
    let p = provider();
    let dims = EstimatorModel::dims_for(&p, 5, [64, 64]).unwrap();
    let mut model = EstimatorModel::new(EstimatorConfig { seed: 5, ..Default::default() }, dims).unwrap();
    // Give the zero-initialized layers values so the golden covers them.
    for (name, t) in model.params.tensors_mut() {
        if name.starts_with("r2") || name.starts_with("mlp2") {
            for (i, v) in t.iter_mut().enumerate() {
                *v = 0.01 * ((i % 7) as f64 - 3.0);
            }
        }
    }
    let pair = p.provide(&frame(View::Left, 17)).unwrap();
    let (f2, f3) = model.stack(&[&pair]).unwrap();
    let fw = model.forward(&f2, &f3, 1, true).unwrap();
    let got = Golden {
        joints: fw.joints.clone(),
        heatmap_sum: fw.heatmaps.values.sum(),
    };
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/forward.json");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, serde_json::to_string_pretty(&got).unwrap()).unwrap();
        return;
    }
    let text = std::fs::read_to_string(&path)
        .unwrap_or_else(|_| panic!("missing {}; rerun with UPDATE_GOLDEN=1", path.display()));
    let want: Golden = serde_json::from_str(&text).unwrap();
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + b.abs());
    assert!(close(got.heatmap_sum, want.heatmap_sum));
    for (a, b) in got.joints.iter().zip(&want.joints) {
        for k in 0..3 {
            assert!(close(a[k], b[k]), "{a:?} vs {b:?}");
        }
    }
    // Purity: a second call agrees bitwise.
    let again = model.estimate_features(&pair).unwrap();
    for (a, b) in again.joints.iter().zip(&fw.joints) {
        assert_eq!(a.to_array(), *b);
    }
}

fn short_training(steps: usize) -> (EstimatorModel, TrainReport, Dataset) {
    let s = toy_scene();
    let m = &s.motion;
    let cams = cameras();
    let style = RenderStyle::default();
    let cfg = TrainConfig {
        steps,
        batch_size: 8,
        seed: 4,
        ..Default::default()
    };
    let data = build_dataset(m, &cams, &cfg, &|_, cam, f| render(&m.skeleton, &m.poses[f], cam, &style)).unwrap();
    let (model, report) = train_estimator(EstimatorConfig::default(), &data, &provider(), &cfg).unwrap();
    (model, report, data)
}

#[test]
fn dataset_uses_three_views_and_weighted_keyframes() {
    let s = toy_scene();
    let m = &s.motion;
    let cfg = TrainConfig::default();
    assert_eq!((cfg.steps, cfg.views.len(), cfg.keyframe_weight), (3500, 3, 3));
    let data = build_dataset(m, &cameras(), &cfg, &|_, _, _| Ok(Image::filled(64, 64, 3, 0.0))).unwrap();
    let keys = m.keyframe_indices.iter().filter(|&&k| k >= m.context_length).count();
    assert_eq!(data.samples.len(), 3 * (60 + keys));
    assert!(data.samples.iter().all(|s| s.image.view != View::Back));
    let pool = anymole_core::clips::expand_weighted(&data.samples);
    assert_eq!(pool.len(), 3 * (60 + 3 * keys));
}

#[test]
fn short_training_reduces_loss_and_round_trips() {
    let (model, report, data) = short_training(120);
    let head: f64 = report.losses[..10].iter().sum::<f64>() / 10.0;
    let tail: f64 = report.losses[110..].iter().sum::<f64>() / 10.0;
    assert!(tail < 0.5 * head, "loss {head} -> {tail}");
    assert!(report.excluded.is_empty());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("est.json");
    let p = provider();
    checkpoint::save(&model, &p, Some(&report.config), &path).unwrap();
    let (back, p2, sidecar) = checkpoint::load(&path, 3).unwrap();
    assert_eq!(back, model);
    assert_eq!(sidecar.training.unwrap().keyframe_weight, 3);
    let a = model.estimate(&p, &data.images[0]).unwrap();
    let b = back.estimate(&p2, &data.images[0]).unwrap();
    assert_eq!(a, b);

    let mut bytes = std::fs::read(checkpoint::blob_path(&path)).unwrap();
    bytes[3] ^= 1;
    std::fs::write(checkpoint::blob_path(&path), bytes).unwrap();
    assert!(checkpoint::load(&path, 3).is_err());
}

#[test]
fn out_of_image_samples_are_excluded() {
    let s = toy_scene();
    let m = &s.motion;
    let cfg = TrainConfig {
        steps: 2,
        batch_size: 2,
        ..Default::default()
    };
    let mut data = build_dataset(m, &cameras(), &cfg, &|_, cam, f| render(&m.skeleton, &m.poses[f], cam, &RenderStyle::default())).unwrap();
    data.samples[0].joints_screen[2].x = -4.0;
    let (_, report) = train_estimator(EstimatorConfig::default(), &data, &provider(), &cfg).unwrap();
    assert_eq!(report.excluded, vec![data.samples[0].image.clone()]);
    assert_eq!(report.samples_used, data.samples.len() - 1);
}
