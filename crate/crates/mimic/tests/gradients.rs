//! Mimic objective gradients against central differences.

use anymole_core::render::render;
use anymole_core::{fk, named_view, project, Pose, Quat, RenderStyle, Skeleton, View};
use anymole_mimic::loss::{mimic_loss, pack, FrameTargets, MimicConfig, MimicScene};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_quat(rng: &mut ChaCha8Rng, spread: f64) -> Quat {
    let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    Quat::from_axis_angle(&axis.normalize(), rng.random_range(-spread..spread))
}

fn three_joint() -> Skeleton {
    Skeleton::chain(&[Vector3::zeros(), Vector3::new(0.0, 0.6, 0.1), Vector3::new(0.1, 0.5, 0.0)]).unwrap()
}

fn pose(rng: &mut ChaCha8Rng) -> Pose {
    Pose {
        root: Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.6..-0.4), rng.random_range(-0.1..0.1)),
        rotations: (0..3).map(|_| random_quat(rng, 0.8)).collect(),
    }
}

#[test]
fn full_objective_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let sk = three_joint();
    let cam = named_view(View::Front, &Vector3::zeros(), 5.0, (40, 40), 14.0, 1.5).unwrap();
    let style = RenderStyle::default();
    let scene = MimicScene {
        skeleton: &sk,
        camera: &cam,
        style: &style,
    };
    let config = MimicConfig::default();
    let mut worst_p: f64 = 0.0;
    let mut worst_r: f64 = 0.0;
    for _ in 0..5 {
        let gt = pose(&mut rng);
        let targets = FrameTargets {
            luma: render(&sk, &gt, &cam, &style).unwrap().luminance(),
            joints: project(&fk(&sk, &gt).unwrap(), &cam).joints,
            root: gt.root + Vector3::new(0.02, -0.01, 0.03),
            rotations: (0..3).map(|_| random_quat(&mut rng, 0.8)).collect(),
        };
        let cur = pose(&mut rng);
        let params = pack(&cur);
        let (_, grad) = mimic_loss(&params, &scene, &targets, &config).unwrap();
        let f = |p: &[f64]| mimic_loss(p, &scene, &targets, &config).unwrap().0.total;

        let h = 1e-6;
        for k in 0..3 {
            let mut a = params.clone();
            let mut b = params.clone();
            a[k] += h;
            b[k] -= h;
            let fd = (f(&a) - f(&b)) / (2.0 * h);
            let rel = (fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1e-6);
            worst_p = worst_p.max(rel);
            assert!(rel < 1e-4, "root {k}: {} vs {fd}", grad[k]);
        }
        // Tangent directions at each unit quaternion.
        for j in 0..3 {
            let q: Vec<f64> = params[3 + 4 * j..7 + 4 * j].to_vec();
            for _ in 0..3 {
                let mut v: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
                let d: f64 = v.iter().zip(&q).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(&q).for_each(|(a, b)| *a -= d * b);
                let mut a = params.clone();
                let mut b = params.clone();
                for c in 0..4 {
                    a[3 + 4 * j + c] += h * v[c];
                    b[3 + 4 * j + c] -= h * v[c];
                }
                let fd = (f(&a) - f(&b)) / (2.0 * h);
                let an: f64 = (0..4).map(|c| grad[3 + 4 * j + c] * v[c]).sum();
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                worst_r = worst_r.max(rel);
                assert!(rel < 1e-3, "joint {j}: {an} vs {fd}");
            }
        }
    }
    eprintln!("worst relative error: root {worst_p:.2e}, rotation {worst_r:.2e}");
}
