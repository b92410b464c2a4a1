//! Property tests against independent oracles.

use anymole_core::camera::{named_view, project, View};
use anymole_core::clips::gather_clips;
use anymole_core::image::Image;
use anymole_core::metrics::{hl2q, l2p, l2q, npss, HierarchyFilter};
use anymole_core::motion::{fk, upsample_motion, MotionSequence, Pose};
use anymole_core::quat::{slerp, Quat};
use anymole_core::render::{render, render_screen_backward, Raster, RenderStyle};
use anymole_core::skeleton::{Joint, Skeleton};
use nalgebra::{Matrix4, Vector3, Vector4};
use proptest::prelude::*;

fn arb_quat() -> impl Strategy<Value = Quat> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
        .prop_filter("non-degenerate", |(w, x, y, z)| w * w + x * x + y * y + z * z > 0.05)
        .prop_map(|(w, x, y, z)| Quat::new(w, x, y, z).normalized().unwrap())
}

fn arb_vec(r: f64) -> impl Strategy<Value = Vector3<f64>> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

/// Random tree: each joint's parent is drawn from the joints before it.
fn arb_skeleton(max: usize) -> impl Strategy<Value = Skeleton> {
    (1..=max).prop_flat_map(|n| {
        let parents: Vec<_> = (1..n).map(|j| 0..j).collect();
        (parents, prop::collection::vec(arb_vec(1.0), n)).prop_map(|(parents, offsets)| {
            let mut joints = vec![Joint::new("j0", None, Vector3::zeros())];
            for (j, p) in parents.into_iter().enumerate() {
                joints.push(Joint::new(format!("j{}", j + 1), Some(p), offsets[j + 1]));
            }
            Skeleton::new(joints).unwrap()
        })
    })
}

fn arb_pose(n: usize) -> impl Strategy<Value = Pose> {
    (arb_vec(2.0), prop::collection::vec(arb_quat(), n)).prop_map(|(root, rotations)| Pose { root, rotations })
}

fn arb_skeleton_pose(max: usize) -> impl Strategy<Value = (Skeleton, Pose)> {
    arb_skeleton(max).prop_flat_map(|s| {
        let n = s.len();
        (Just(s), arb_pose(n))
    })
}

fn homogeneous(q: &Quat, t: &Vector3<f64>) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&q.to_matrix());
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(t);
    m
}

/// Global positions by chaining 4x4 transforms.
fn fk_oracle(skel: &Skeleton, pose: &Pose) -> Vec<Vector3<f64>> {
    let mut world: Vec<Matrix4<f64>> = Vec::new();
    for j in 0..skel.len() {
        let m = match skel.parent(j) {
            None => homogeneous(&pose.rotations[j], &pose.root),
            Some(p) => world[p] * homogeneous(&pose.rotations[j], skel.offset(j)),
        };
        world.push(m);
    }
    world
        .iter()
        .map(|m| (m * Vector4::new(0.0, 0.0, 0.0, 1.0)).xyz())
        .collect()
}

fn arb_motion_pair(max_joints: usize, frames: usize) -> impl Strategy<Value = (MotionSequence, MotionSequence)> {
    arb_skeleton(max_joints).prop_flat_map(move |s| {
        let n = s.len();
        (
            Just(s),
            prop::collection::vec(arb_pose(n), frames),
            prop::collection::vec(arb_pose(n), frames),
        )
            .prop_map(|(s, a, b)| {
                (
                    MotionSequence::new(s.clone(), 30, a, vec![], 0).unwrap(),
                    MotionSequence::new(s, 30, b, vec![], 0).unwrap(),
                )
            })
    })
}

/// Two-sided power spectrum without DC, by direct summation.
fn naive_power(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (1..n)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, v) in x.iter().enumerate() {
                let a = -2.0 * std::f64::consts::PI * (k * t) as f64 / n as f64;
                re += v * a.cos();
                im += v * a.sin();
            }
            re * re + im * im
        })
        .collect()
}

fn emd_oracle(p: &[f64], g: &[f64]) -> f64 {
    let norm = |s: &[f64]| {
        let t: f64 = s.iter().sum();
        if t > 0.0 {
            s.iter().map(|v| v / t).collect::<Vec<_>>()
        } else {
            vec![1.0 / s.len() as f64; s.len()]
        }
    };
    let (p, g) = (norm(p), norm(g));
    let mut total = 0.0;
    for k in 0..p.len() {
        let cp: f64 = p[..=k].iter().sum();
        let cg: f64 = g[..=k].iter().sum();
        total += (cp - cg).abs();
    }
    total
}

fn npss_oracle(pred: &MotionSequence, gt: &MotionSequence) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for j in 0..gt.skeleton.len() {
        for c in 0..4 {
            let series = |m: &MotionSequence| -> Vec<f64> {
                m.poses.iter().map(|p| p.rotations[j].canonical().to_array()[c]).collect()
            };
            let pg = naive_power(&series(gt));
            let pp = naive_power(&series(pred));
            let w: f64 = pg.iter().sum();
            if w > 0.0 {
                num += w * emd_oracle(&pp, &pg);
                den += w;
            }
        }
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

fn l2p_oracle(pred: &MotionSequence, gt: &MotionSequence) -> f64 {
    let rest = gt.skeleton.rest_positions();
    let mut ext: f64 = 0.0;
    for a in 0..3 {
        let lo = rest.iter().map(|p| p[a]).fold(f64::INFINITY, f64::min);
        let hi = rest.iter().map(|p| p[a]).fold(f64::NEG_INFINITY, f64::max);
        ext = ext.max(hi - lo);
    }
    let h = if ext > 0.0 { ext } else { 1.0 };
    let mut total = 0.0;
    let mut count = 0.0;
    for (a, b) in pred.poses.iter().zip(&gt.poses) {
        let pa = fk_oracle(&pred.skeleton, a);
        let pb = fk_oracle(&gt.skeleton, b);
        for (x, y) in pa.iter().zip(&pb) {
            total += (x - y).norm_squared();
            count += 1.0;
        }
    }
    total / count / (h * h)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn fk_matches_homogeneous_oracle((skel, pose) in arb_skeleton_pose(10)) {
        let got = fk(&skel, &pose).unwrap();
        for (a, b) in got.iter().zip(fk_oracle(&skel, &pose)) {
            prop_assert!((a - b).norm() < 1e-6);
        }
    }

    #[test]
    fn slerp_angle_is_linear(q0 in arb_quat(), q1 in arb_quat(), t in 0.0..1.0f64) {
        let q = slerp(&q0, &q1, t).unwrap();
        prop_assert!((q.norm() - 1.0).abs() < 1e-9);
        let total = q0.angle_to(&q1);
        prop_assert!((q0.angle_to(&q) - t * total).abs() < 1e-6);
    }

    #[test]
    fn projection_is_affine(a in arb_vec(1.0), b in arb_vec(1.0), s in 0.0..1.0f64) {
        let cam = named_view(View::Left, &Vector3::new(0.1, 0.0, -0.2), 6.0, (64, 48), 12.0, 3.0).unwrap();
        let mid = a * (1.0 - s) + b * s;
        let p = project(&[a, b, mid], &cam).joints;
        prop_assert!((p[2].x - (p[0].x * (1.0 - s) + p[1].x * s)).abs() < 1e-9);
        prop_assert!((p[2].y - (p[0].y * (1.0 - s) + p[1].y * s)).abs() < 1e-9);
        prop_assert!((p[2].depth - (p[0].depth * (1.0 - s) + p[1].depth * s)).abs() < 1e-9);
    }

    #[test]
    fn clips_match_brute_force(views in 1usize..4, fpv in 2usize..70, k in 2usize..17,
                               intervals in prop::collection::vec(1usize..5, 1..4)) {
        let clips = gather_clips(views, fpv, k, &intervals, 30.0).unwrap();
        let mut expected = Vec::new();
        for v in 0..views {
            for &s in &intervals {
                for start in 0..fpv {
                    let idx: Vec<usize> = (0..k).map(|i| start + i * s).collect();
                    if idx.iter().all(|&i| i < fpv) && start + k * s <= fpv {
                        expected.push((v, s, idx));
                    }
                }
            }
        }
        let got: Vec<_> = clips.iter().map(|c| (c.view, c.interval, c.frame_indices.clone())).collect();
        prop_assert_eq!(got, expected);
        for c in &clips {
            prop_assert_eq!(c.fps_tag, 30.0 / c.interval as f64);
        }
    }

    #[test]
    fn metrics_identity_symmetry_and_oracles((a, b) in arb_motion_pair(6, 8)) {
        prop_assert_eq!(l2q(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(l2p(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(npss(&a, &a).unwrap(), 0.0);
        prop_assert!((l2q(&a, &b).unwrap() - l2q(&b, &a).unwrap()).abs() < 1e-15);
        prop_assert!((l2p(&a, &b).unwrap() - l2p(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert_eq!(
            hl2q(&a, &b, HierarchyFilter::new(1.0).unwrap()).unwrap().to_bits(),
            l2q(&a, &b).unwrap().to_bits()
        );
        prop_assert!(npss(&a, &b).unwrap() >= 0.0);
        prop_assert!((npss(&a, &b).unwrap() - npss_oracle(&a, &b)).abs() < 1e-9);
        prop_assert!((l2p(&a, &b).unwrap() - l2p_oracle(&a, &b)).abs() < 1e-9);
    }

    #[test]
    fn upsampling_keeps_keyframes_and_shape(frames in prop::collection::vec(arb_pose(3), 2..8), ratio in 1u32..4) {
        let skel = Skeleton::chain(&[Vector3::zeros(), Vector3::y(), Vector3::y()]).unwrap();
        let n = frames.len();
        let m = MotionSequence::new(skel, 10, frames, vec![0, n - 1], n / 2).unwrap();
        let up = upsample_motion(&m, 10 * ratio).unwrap();
        let r = ratio as usize;
        prop_assert_eq!(up.len(), (n - 1) * r + 1);
        for (&k, &ku) in m.keyframe_indices.iter().zip(&up.keyframe_indices) {
            prop_assert_eq!(ku, k * r);
            prop_assert_eq!(&up.poses[ku], &m.poses[k]);
        }
        for p in &up.poses {
            prop_assert!(p.rotations.iter().all(|q| q.is_unit()));
        }
    }
}

#[test]
fn npss_of_two_sines_matches_oracle() {
    let skel = Skeleton::chain(&[Vector3::zeros()]).unwrap();
    let make = |period: f64| {
        let poses = (0..32)
            .map(|t| {
                let a = 0.3 * (2.0 * std::f64::consts::PI * t as f64 / period).sin();
                Pose {
                    root: Vector3::zeros(),
                    rotations: vec![Quat::from_axis_angle(&Vector3::z(), a)],
                }
            })
            .collect();
        MotionSequence::new(skel.clone(), 30, poses, vec![], 0).unwrap()
    };
    let (a, b) = (make(8.0), make(4.0));
    let v = npss(&a, &b).unwrap();
    assert!(v > 0.0);
    assert!((v - npss_oracle(&a, &b)).abs() < 1e-9);
}

#[test]
fn constant_motions_have_zero_npss() {
    let skel = Skeleton::chain(&[Vector3::zeros(), Vector3::y()]).unwrap();
    let q = Quat::from_axis_angle(&Vector3::x(), 0.4);
    let a = MotionSequence::new(skel.clone(), 30, vec![Pose::identity(2); 10], vec![], 0).unwrap();
    let b = MotionSequence::new(
        skel,
        30,
        vec![Pose { root: Vector3::zeros(), rotations: vec![q, q] }; 10],
        vec![],
        0,
    )
    .unwrap();
    assert_eq!(npss(&a, &b).unwrap(), 0.0);
}

fn branching() -> Skeleton {
    Skeleton::new(vec![
        Joint::new("hip", None, Vector3::zeros()),
        Joint::new("l", Some(0), Vector3::new(-0.4, 0.5, 0.0)),
        Joint::new("r", Some(0), Vector3::new(0.5, 0.4, 0.1)),
        Joint::new("l2", Some(1), Vector3::new(0.0, 0.5, 0.0)),
    ])
    .unwrap()
}

fn shift_correlation_peak(a: &Image, b: &Image, max: i64) -> (i64, i64) {
    let (la, lb) = (a.luminance(), b.luminance());
    let mut best = (f64::NEG_INFINITY, (0, 0));
    for dy in -max..=max {
        for dx in -max..=max {
            let mut s = 0.0;
            for y in 0..la.height as i64 {
                for x in 0..la.width as i64 {
                    let (xs, ys) = (x + dx, y + dy);
                    if xs >= 0 && ys >= 0 && xs < la.width as i64 && ys < la.height as i64 {
                        s += la.get(x as usize, y as usize, 0) * lb.get(xs as usize, ys as usize, 0);
                    }
                }
            }
            if s > best.0 {
                best = (s, (dx, dy));
            }
        }
    }
    best.1
}

#[test]
fn root_translation_shifts_image() {
    let skel = branching();
    let cam = named_view(View::Front, &Vector3::zeros(), 5.0, (64, 64), 20.0, 2.0).unwrap();
    let style = RenderStyle::default();
    let mut pose = Pose::identity(4);
    let a = render(&skel, &pose, &cam, &style).unwrap();
    pose.root.x += 0.15; // 3 pixels at scale 20
    let b = render(&skel, &pose, &cam, &style).unwrap();
    assert_eq!(shift_correlation_peak(&a, &b, 6), (3, 0));
}

#[test]
fn root_gradient_matches_finite_differences() {
    let skel = branching();
    let cam = named_view(View::Right, &Vector3::zeros(), 5.0, (40, 40), 15.0, 2.0).unwrap();
    let style = RenderStyle::default();
    let parents: Vec<_> = (0..skel.len()).map(|j| skel.parent(j)).collect();
    let mut pose = Pose::identity(4);
    pose.rotations[1] = Quat::from_axis_angle(&Vector3::new(0.3, 0.2, 1.0).normalize(), 0.5);
    pose.root = Vector3::new(0.05, -0.3, 0.1);
    let raster = Raster::from(&cam);
    let mut w = Image::filled(40, 40, 3, 0.0);
    for (i, v) in w.data.iter_mut().enumerate() {
        *v = ((i * 31 % 23) as f64 / 23.0) - 0.5;
    }
    let loss = |p: &Pose| -> f64 {
        let img = render(&skel, p, &cam, &style).unwrap();
        img.data.iter().zip(&w.data).map(|(a, b)| a * b).sum()
    };
    let joints = project(&fk(&skel, &pose).unwrap(), &cam).joints;
    let g = render_screen_backward(&parents, &joints, &style, raster, &w).unwrap();
    let jac = cam.jacobian();
    let mut analytic = Vector3::zeros();
    for gj in &g {
        analytic += jac.transpose() * Vector3::from(*gj);
    }
    let h = 1e-6;
    for a in 0..3 {
        let (mut p, mut m) = (pose.clone(), pose.clone());
        p.root[a] += h;
        m.root[a] -= h;
        let fd = (loss(&p) - loss(&m)) / (2.0 * h);
        let rel = (fd - analytic[a]).abs() / fd.abs().max(1e-3);
        assert!(rel < 1e-4, "axis {a}: fd {fd} analytic {}", analytic[a]);
    }
}

#[test]
fn reordering_joints_with_colors_leaves_image_unchanged() {
    let skel = branching();
    let swapped = Skeleton::new(vec![
        Joint::new("hip", None, Vector3::zeros()),
        Joint::new("r", Some(0), Vector3::new(0.5, 0.4, 0.1)),
        Joint::new("l", Some(0), Vector3::new(-0.4, 0.5, 0.0)),
        Joint::new("l2", Some(2), Vector3::new(0.0, 0.5, 0.0)),
    ])
    .unwrap();
    let cam = named_view(View::Front, &Vector3::zeros(), 5.0, (48, 48), 18.0, 2.0).unwrap();
    let style = RenderStyle::default();
    let mut swapped_style = style.clone();
    swapped_style.joint_colors = vec![style.color(0), style.color(2), style.color(1), style.color(3)];
    let q = Quat::from_axis_angle(&Vector3::z(), 0.3);
    let pose = Pose {
        root: Vector3::zeros(),
        rotations: vec![Quat::IDENTITY, q, Quat::IDENTITY, q],
    };
    let pose2 = Pose {
        root: Vector3::zeros(),
        rotations: vec![Quat::IDENTITY, Quat::IDENTITY, q, q],
    };
    let a = render(&skel, &pose, &cam, &style).unwrap();
    let b = render(&swapped, &pose2, &cam, &swapped_style).unwrap();
    assert_eq!(a, b);
}

#[test]
fn small_pose_perturbations_change_pixels_little() {
    let skel = branching();
    let cam = named_view(View::Front, &Vector3::zeros(), 5.0, (48, 48), 18.0, 2.0).unwrap();
    let style = RenderStyle::default();
    let pose = Pose::identity(4);
    let base = render(&skel, &pose, &cam, &style).unwrap();
    for j in 0..4 {
        let mut p = pose.clone();
        p.rotations[j] = Quat::from_axis_angle(&Vector3::x(), 1e-3).mul(&p.rotations[j]);
        p.root.y += 1e-3;
        let img = render(&skel, &p, &cam, &style).unwrap();
        let max = base.data.iter().zip(&img.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(max < 0.02, "joint {j}: jump {max}");
    }
}

#[test]
fn rendering_is_deterministic_to_the_byte() {
    let skel = branching();
    let cam = named_view(View::Left, &Vector3::zeros(), 5.0, (32, 32), 12.0, 2.0).unwrap();
    let style = RenderStyle::default();
    let dir = tempfile::tempdir().unwrap();
    let pose = Pose::identity(4);
    for name in ["a.png", "b.png"] {
        render(&skel, &pose, &cam, &style).unwrap().save_png(dir.path().join(name)).unwrap();
    }
    let a = std::fs::read(dir.path().join("a.png")).unwrap();
    let b = std::fs::read(dir.path().join("b.png")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn render_views_counts() {
    let scene = anymole_core::scene::toy_scene();
    let motion = scene.motion.slice(0..60).unwrap();
    let cams: Vec<_> = View::ALL
        .iter()
        .map(|&v| (v, named_view(v, &scene.center, 5.0, (32, 32), 8.0, scene.radius).unwrap()))
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let out = anymole_core::render::render_views(&motion, &cams, &RenderStyle::default(), dir.path()).unwrap();
    assert_eq!(out.written.len(), 4 * 60);
    assert!(out.failures.is_empty());
    for v in View::ALL {
        assert_eq!(std::fs::read_dir(dir.path().join(v.name())).unwrap().count(), 60);
    }
}
