//! The bundled synthetic scene: a five-joint chain swinging with a 2 s
//! period. A slow amplitude drift keeps later poses close to, but not
//! copies of, the first two seconds.

use std::f64::consts::PI;

use nalgebra::Vector3;

use crate::motion::{MotionSequence, Pose};
use crate::quat::Quat;
use crate::skeleton::Skeleton;

#[derive(Debug, Clone)]
pub struct ToyScene {
    pub motion: MotionSequence,
    /// Point the named cameras look at.
    pub center: Vector3<f64>,
    /// Bounding radius of everything the motion touches around `center`.
    pub radius: f64,
}

pub const TOY_FPS: u32 = 30;
pub const TOY_SECONDS: usize = 6;
pub const TOY_CONTEXT_SECONDS: usize = 2;

pub fn toy_skeleton() -> Skeleton {
    Skeleton::chain(&[
        Vector3::zeros(),
        Vector3::new(0.0, 0.55, 0.0),
        Vector3::new(0.1, 0.5, 0.1),
        Vector3::new(-0.1, 0.45, 0.05),
        Vector3::new(0.05, 0.4, -0.1),
    ])
    .expect("static chain is valid")
}

/// Rotation by `a` about `u` and `b` about `v`, combined as one rotation vector.
fn swing(u: &Vector3<f64>, v: &Vector3<f64>, a: f64, b: f64) -> Quat {
    let r = u * a + v * b;
    let angle = r.norm();
    if angle == 0.0 {
        return Quat::IDENTITY;
    }
    Quat::from_axis_angle(&(r / angle), angle)
}

/// Two unit axes perpendicular to `bone`.
fn swing_axes(bone: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let u = bone.cross(&Vector3::z()).normalize();
    let v = bone.cross(&u).normalize();
    (u, v)
}

/// Ground-truth pose at time `t` seconds.
///
/// Every rotation swings its joint's child bone and never twists about it:
/// the renderer draws round joints and bones, so twist would be invisible.
/// The leaf joint has no child and keeps the identity rotation.
pub fn toy_pose(t: f64) -> Pose {
    let w = PI * t;
    let m = 1.0 + 0.15 * (0.45 * t).sin();
    let root = Vector3::new(
        0.05 * (w + 0.4).sin(),
        -1.0 + 0.03 * (2.0 * w).sin(),
        0.04 * (w + 1.0).sin(),
    );
    let amps = [
        (0.15, 0.2, 0.1, 1.3),
        (m * 0.55, 0.3, 0.3, 2.0),
        (m * 0.5, 1.1, m * 0.35, 0.5),
        (m * 0.45, 2.2, 0.3, 0.9),
    ];
    let sk = toy_skeleton();
    let mut rotations: Vec<Quat> = amps
        .iter()
        .enumerate()
        .map(|(j, &(a, pa, b, pb))| {
            let (u, v) = swing_axes(sk.offset(j + 1));
            swing(&u, &v, a * (w + pa).sin(), b * (w + pb).sin())
        })
        .collect();
    rotations.push(Quat::IDENTITY);
    Pose { root, rotations }
}

/// Six seconds at 30 fps: frames `0..60` are context, keyframes sit at
/// one-second intervals from the end of the context through the last frame.
pub fn toy_scene() -> ToyScene {
    let n = TOY_SECONDS * TOY_FPS as usize + 1;
    let poses = (0..n).map(|i| toy_pose(i as f64 / TOY_FPS as f64)).collect();
    let context = TOY_CONTEXT_SECONDS * TOY_FPS as usize;
    let keyframes = (TOY_CONTEXT_SECONDS..=TOY_SECONDS)
        .map(|s| s * TOY_FPS as usize)
        .collect();
    let motion = MotionSequence::new(toy_skeleton(), TOY_FPS, poses, keyframes, context)
        .expect("toy motion is valid");
    ToyScene {
        motion,
        center: Vector3::new(0.0, 0.0, 0.0),
        radius: 1.5,
    }
}
