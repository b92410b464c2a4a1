//! The per-frame mimicking objective and its exact gradient.
//!
//! Parameters are packed as `[root (3), q_0 (4), q_1 (4), ...]` where each
//! `q_j` is an unconstrained 4-vector normalized before use.

use anymole_core::image::LUMA;
use anymole_core::quat::{rotation_matrix, rotation_matrix_grad};
use anymole_core::render::{render_screen, render_screen_backward, Raster};
use anymole_core::{CameraParams, Error, Image, Pose, Quat, RenderStyle, Result, ScreenJoint, Skeleton};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MimicConfig {
    pub lambda_img: f64,
    pub lambda_pos: f64,
    pub lambda_rot: f64,
    pub steps_per_sequence: usize,
    pub batch_size: usize,
    /// Number of views optimized against; only a single view is supported.
    pub views: usize,
    /// Adam step size for the root position.
    pub lr_position: f64,
    /// Adam step size for the quaternion components.
    pub lr_rotation: f64,
}

impl Default for MimicConfig {
    fn default() -> Self {
        MimicConfig {
            lambda_img: 50.0,
            lambda_pos: 7000.0,
            lambda_rot: 30000.0,
            steps_per_sequence: 100,
            batch_size: 6,
            views: 1,
            lr_position: 1e-2,
            lr_rotation: 1e-2,
        }
    }
}

impl MimicConfig {
    pub fn validate(&self) -> Result<()> {
        let lambdas = [self.lambda_img, self.lambda_pos, self.lambda_rot];
        if lambdas.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(Error::config("mimic loss weights must be finite and non-negative"));
        }
        if self.steps_per_sequence == 0 || self.batch_size == 0 {
            return Err(Error::config("mimic steps and batch size must be positive"));
        }
        if self.views != 1 {
            return Err(Error::config("mimicking runs in a single view"));
        }
        if !(self.lr_position > 0.0 && self.lr_rotation > 0.0) {
            return Err(Error::config("mimic step sizes must be positive"));
        }
        Ok(())
    }
}

/// Fixed inputs of one frame's objective.
#[derive(Debug, Clone)]
pub struct FrameTargets {
    /// Target frame luminance (one channel).
    pub luma: Image,
    /// Estimator output on the target frame.
    pub joints: Vec<ScreenJoint>,
    pub root: Vector3<f64>,
    pub rotations: Vec<Quat>,
}

/// Renderer and camera shared by every frame.
#[derive(Debug, Clone)]
pub struct MimicScene<'a> {
    pub skeleton: &'a Skeleton,
    pub camera: &'a CameraParams,
    pub style: &'a RenderStyle,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub joint: f64,
    pub image: f64,
    pub position: f64,
    pub rotation: f64,
    pub total: f64,
}

impl LossTerms {
    /// Name of the first non-finite term, if any.
    pub fn non_finite(&self) -> Option<&'static str> {
        [
            ("joint", self.joint),
            ("image", self.image),
            ("position", self.position),
            ("rotation", self.rotation),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

pub fn pack(pose: &Pose) -> Vec<f64> {
    let mut v = Vec::with_capacity(3 + 4 * pose.rotations.len());
    v.extend(pose.root.iter());
    for q in &pose.rotations {
        v.extend(q.to_array());
    }
    v
}

/// Pose with normalized rotations.
pub fn unpack(params: &[f64]) -> Result<Pose> {
    if params.len() < 3 || (params.len() - 3) % 4 != 0 {
        return Err(Error::contract(format!("{} is not a valid pose parameter length", params.len())));
    }
    let rotations = params[3..]
        .chunks_exact(4)
        .map(|c| Quat::from_array([c[0], c[1], c[2], c[3]]).normalized())
        .collect::<Result<Vec<_>>>()?;
    Ok(Pose {
        root: Vector3::new(params[0], params[1], params[2]),
        rotations,
    })
}

/// Rescales every quaternion block to unit length.
pub fn renormalize(params: &mut [f64]) {
    for c in params[3..].chunks_exact_mut(4) {
        let n = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            c.iter_mut().for_each(|v| *v /= n);
        }
    }
}

fn parents(skeleton: &Skeleton) -> Vec<Option<usize>> {
    (0..skeleton.len()).map(|j| skeleton.parent(j)).collect()
}

/// Loss terms and the gradient with respect to the packed parameters.
pub fn mimic_loss(
    params: &[f64],
    scene: &MimicScene,
    targets: &FrameTargets,
    config: &MimicConfig,
) -> Result<(LossTerms, Vec<f64>)> {
    let sk = scene.skeleton;
    let n = sk.len();
    if params.len() != 3 + 4 * n || targets.joints.len() != n || targets.rotations.len() != n {
        return Err(Error::contract("mimic parameters or targets do not match the skeleton"));
    }
    let cam = scene.camera;
    let raster = Raster::from(cam);
    if targets.luma.width != raster.width || targets.luma.height != raster.height || targets.luma.channels != 1 {
        return Err(Error::contract("target frame does not match the camera raster"));
    }

    let root = Vector3::new(params[0], params[1], params[2]);
    let mut unit = Vec::with_capacity(n);
    let mut norms = Vec::with_capacity(n);
    for c in params[3..].chunks_exact(4) {
        let r = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::contract("degenerate rotation parameter"));
        }
        norms.push(r);
        unit.push([c[0] / r, c[1] / r, c[2] / r, c[3] / r]);
    }
    let local: Vec<Matrix3<f64>> = unit.iter().map(|q| rotation_matrix(*q)).collect();
    let fw = anymole_core::motion::fk_matrices(sk, &root, &local);

    let mut screen = Vec::with_capacity(n);
    let mut clamped = Vec::with_capacity(n);
    for p in &fw.positions {
        let (s, c) = cam.project_point(p);
        screen.push(s);
        clamped.push(c);
    }

    // Joint term.
    let mut terms = LossTerms::default();
    let mut d_screen = vec![[0.0; 3]; n];
    for j in 0..n {
        let d = [
            screen[j].x - targets.joints[j].x,
            screen[j].y - targets.joints[j].y,
            screen[j].depth - targets.joints[j].depth,
        ];
        for k in 0..3 {
            terms.joint += d[k] * d[k];
            d_screen[j][k] = 2.0 * d[k];
        }
    }

    // Image term on luminance.
    let par = parents(sk);
    if config.lambda_img > 0.0 {
        let img = render_screen(&par, &screen, scene.style, raster);
        let mut d_img = Image::filled(raster.width, raster.height, 3, 0.0);
        for (i, px) in img.data.chunks_exact(3).enumerate() {
            let l: f64 = px.iter().zip(LUMA).map(|(v, w)| v * w).sum();
            let diff = l - targets.luma.data[i];
            terms.image += diff * diff;
            for c in 0..3 {
                d_img.data[3 * i + c] = 2.0 * config.lambda_img * diff * LUMA[c];
            }
        }
        let g = render_screen_backward(&par, &screen, scene.style, raster, &d_img)?;
        for j in 0..n {
            for k in 0..3 {
                d_screen[j][k] += g[j][k];
            }
        }
    }

    // Screen -> world.
    let jac = cam.jacobian();
    let d_pos: Vec<Vector3<f64>> = (0..n)
        .map(|j| {
            let mut ds = Vector3::from(d_screen[j]);
            if clamped[j] {
                ds.z = 0.0;
            }
            jac.transpose() * ds
        })
        .collect();
    let (d_root, d_local) = anymole_core::motion::fk_backward(sk, &local, &fw, &d_pos);

    let mut grad = vec![0.0; params.len()];
    let dp = root - targets.root;
    terms.position = dp.norm_squared();
    for k in 0..3 {
        grad[k] = d_root[k] + 2.0 * config.lambda_pos * dp[k];
    }
    for j in 0..n {
        let q = unit[j];
        let prev = targets.rotations[j].to_array();
        let dm = rotation_matrix_grad(q);
        let mut dq = [0.0; 4];
        for c in 0..4 {
            dq[c] = d_local[j].component_mul(&dm[c]).sum();
            let e = q[c] - prev[c];
            terms.rotation += e * e;
            dq[c] += 2.0 * config.lambda_rot * e;
        }
        // Through q = r / |r|.
        let along: f64 = (0..4).map(|c| q[c] * dq[c]).sum();
        for c in 0..4 {
            grad[3 + 4 * j + c] = (dq[c] - along * q[c]) / norms[j];
        }
    }
    terms.total = terms.joint
        + config.lambda_img * terms.image
        + config.lambda_pos * terms.position
        + config.lambda_rot * terms.rotation;
    if let Some(term) = terms.non_finite() {
        return Err(Error::contract(format!("mimic loss diverged in the {term} term")));
    }
    Ok((terms, grad))
}
