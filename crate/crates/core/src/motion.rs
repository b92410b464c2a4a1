//! Poses, motion sequences, forward kinematics and temporal resampling.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::quat::{slerp, Quat};
use crate::skeleton::Skeleton;

/// Root translation plus one local rotation per joint.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub root: Vector3<f64>,
    pub rotations: Vec<Quat>,
}

impl Pose {
    pub fn identity(joint_count: usize) -> Self {
        Pose {
            root: Vector3::zeros(),
            rotations: vec![Quat::IDENTITY; joint_count],
        }
    }

    pub fn validate(&self, skeleton: &Skeleton) -> Result<()> {
        if self.rotations.len() != skeleton.len() {
            return Err(Error::contract(format!(
                "pose has {} rotations but skeleton has {} joints",
                self.rotations.len(),
                skeleton.len()
            )));
        }
        if let Some((j, q)) = self.rotations.iter().enumerate().find(|(_, q)| !q.is_unit()) {
            return Err(Error::contract(format!(
                "rotation of joint {j} is not unit (norm {})",
                q.norm()
            )));
        }
        Ok(())
    }

    /// Canonical representative (`w >= 0`) of every rotation.
    pub fn canonical(&self) -> Pose {
        Pose {
            root: self.root,
            rotations: self.rotations.iter().map(|q| q.canonical()).collect(),
        }
    }
}

/// Global joint positions and rotations of one posed skeleton.
#[derive(Debug, Clone)]
pub struct FkResult {
    pub positions: Vec<Vector3<f64>>,
    pub global_rotations: Vec<Matrix3<f64>>,
}

/// Forward kinematics from local rotation matrices.
pub fn fk_matrices(skeleton: &Skeleton, root: &Vector3<f64>, local: &[Matrix3<f64>]) -> FkResult {
    let n = skeleton.len();
    let mut positions: Vec<Vector3<f64>> = Vec::with_capacity(n);
    let mut global_rotations: Vec<Matrix3<f64>> = Vec::with_capacity(n);
    for (j, joint) in skeleton.joints().iter().enumerate() {
        match joint.parent {
            None => {
                positions.push(*root);
                global_rotations.push(local[j]);
            }
            Some(p) => {
                let gp = global_rotations[p];
                positions.push(positions[p] + gp * joint.offset);
                global_rotations.push(gp * local[j]);
            }
        }
    }
    FkResult {
        positions,
        global_rotations,
    }
}

/// Global joint positions of `pose`, in joint order.
pub fn fk(skeleton: &Skeleton, pose: &Pose) -> Result<Vec<Vector3<f64>>> {
    if pose.rotations.len() != skeleton.len() {
        return Err(Error::contract(format!(
            "pose has {} rotations but skeleton has {} joints",
            pose.rotations.len(),
            skeleton.len()
        )));
    }
    let local: Vec<Matrix3<f64>> = pose.rotations.iter().map(|q| q.to_matrix()).collect();
    Ok(fk_matrices(skeleton, &pose.root, &local).positions)
}

/// Reverse-mode pass through [`fk_matrices`].
///
/// Given the gradient of a scalar with respect to every global position,
/// returns the gradient with respect to the root translation and to each
/// local rotation matrix (entrywise).
pub fn fk_backward(
    skeleton: &Skeleton,
    local: &[Matrix3<f64>],
    forward: &FkResult,
    d_positions: &[Vector3<f64>],
) -> (Vector3<f64>, Vec<Matrix3<f64>>) {
    let n = skeleton.len();
    let mut d_pos: Vec<Vector3<f64>> = d_positions.to_vec();
    let mut d_glob = vec![Matrix3::zeros(); n];
    let mut d_local = vec![Matrix3::zeros(); n];
    for j in (0..n).rev() {
        match skeleton.parent(j) {
            Some(p) => {
                let gp = forward.global_rotations[p];
                // positions[j] = positions[p] + gp * offset_j
                let dp = d_pos[j];
                d_pos[p] += dp;
                d_glob[p] += dp * skeleton.offset(j).transpose();
                // global[j] = gp * local[j]
                let dg = d_glob[j];
                d_glob[p] += dg * local[j].transpose();
                d_local[j] = gp.transpose() * dg;
            }
            None => {
                d_local[j] = d_glob[j];
            }
        }
    }
    (d_pos[0], d_local)
}

/// A skeleton animated over time, with keyframe and context bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    pub skeleton: Skeleton,
    pub fps: u32,
    pub poses: Vec<Pose>,
    pub keyframe_indices: Vec<usize>,
    pub context_length: usize,
}

impl MotionSequence {
    pub fn new(
        skeleton: Skeleton,
        fps: u32,
        poses: Vec<Pose>,
        keyframe_indices: Vec<usize>,
        context_length: usize,
    ) -> Result<Self> {
        let m = MotionSequence {
            skeleton,
            fps,
            poses,
            keyframe_indices,
            context_length,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.fps == 0 {
            return Err(Error::contract("fps must be positive"));
        }
        for (i, p) in self.poses.iter().enumerate() {
            p.validate(&self.skeleton)
                .map_err(|e| Error::contract(format!("frame {i}: {e}")))?;
        }
        let n = self.poses.len();
        if self.keyframe_indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::contract("keyframe indices must be sorted and unique"));
        }
        if let Some(&k) = self.keyframe_indices.iter().find(|&&k| k >= n) {
            return Err(Error::contract(format!(
                "keyframe index {k} out of range for {n} frames"
            )));
        }
        if self.context_length > n {
            return Err(Error::contract(format!(
                "context length {} exceeds {n} frames",
                self.context_length
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn is_keyframe(&self, i: usize) -> bool {
        self.keyframe_indices.binary_search(&i).is_ok()
    }

    /// Global joint positions for every frame.
    pub fn global_positions(&self) -> Result<Vec<Vec<Vector3<f64>>>> {
        self.poses.iter().map(|p| fk(&self.skeleton, p)).collect()
    }

    /// Frames `range` as a new sequence; keyframes and context are remapped.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<MotionSequence> {
        if range.end > self.len() || range.start > range.end {
            return Err(Error::contract(format!(
                "slice {range:?} out of range for {} frames",
                self.len()
            )));
        }
        let keys = self
            .keyframe_indices
            .iter()
            .filter(|k| range.contains(k))
            .map(|k| k - range.start)
            .collect();
        let context = self.context_length.saturating_sub(range.start).min(range.len());
        MotionSequence::new(
            self.skeleton.clone(),
            self.fps,
            self.poses[range].to_vec(),
            keys,
            context,
        )
    }
}

/// Standard deviation, in target frames, of the smoothing kernel applied
/// to upsampled root positions.
pub const UPSAMPLE_SIGMA: f64 = 1.0;

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / s).collect()
}

/// Half-sample symmetric reflection of an index into `0..n`.
fn reflect(mut i: i64, n: i64) -> usize {
    if n == 1 {
        return 0;
    }
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - i - 1;
        } else {
            return i as usize;
        }
    }
}

/// Resamples a motion to an integer multiple of its frame rate.
///
/// Root positions are linearly interpolated and then smoothed with a
/// Gaussian filter along time; rotations are slerped between the bracketing
/// source frames. Keyframes land on `k * ratio` and keep their exact pose.
pub fn upsample_motion(motion: &MotionSequence, target_fps: u32) -> Result<MotionSequence> {
    if target_fps == 0 || target_fps % motion.fps != 0 {
        return Err(Error::UnsupportedRate {
            from: motion.fps,
            to: target_fps,
        });
    }
    let ratio = (target_fps / motion.fps) as usize;
    if motion.is_empty() {
        return Err(Error::contract("cannot upsample an empty motion"));
    }
    let n_src = motion.len();
    let n = (n_src - 1) * ratio + 1;

    let mut linear_roots = Vec::with_capacity(n);
    let mut rotations = Vec::with_capacity(n);
    for i in 0..n {
        let s = i / ratio;
        let r = i % ratio;
        if r == 0 {
            linear_roots.push(motion.poses[s].root);
            rotations.push(motion.poses[s].rotations.clone());
            continue;
        }
        let t = r as f64 / ratio as f64;
        let (a, b) = (&motion.poses[s], &motion.poses[s + 1]);
        linear_roots.push(a.root * (1.0 - t) + b.root * t);
        let rots = a
            .rotations
            .iter()
            .zip(&b.rotations)
            .map(|(qa, qb)| slerp(qa, qb, t))
            .collect::<Result<Vec<_>>>()?;
        rotations.push(rots);
    }

    let keyframes: Vec<usize> = motion.keyframe_indices.iter().map(|k| k * ratio).collect();
    let kernel = gaussian_kernel(UPSAMPLE_SIGMA);
    let radius = (kernel.len() / 2) as i64;
    let poses = (0..n)
        .map(|i| {
            let root = if keyframes.binary_search(&i).is_ok() {
                linear_roots[i]
            } else {
                kernel
                    .iter()
                    .enumerate()
                    .map(|(k, w)| linear_roots[reflect(i as i64 + k as i64 - radius, n as i64)] * *w)
                    .sum()
            };
            Pose {
                root,
                rotations: rotations[i].clone(),
            }
        })
        .collect();

    MotionSequence::new(
        motion.skeleton.clone(),
        target_fps,
        poses,
        keyframes,
        (motion.context_length * ratio).min(n),
    )
}
