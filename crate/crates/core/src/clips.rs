//! Training clip enumeration over rendered context frames and the weighted
//! sample list for the joint estimator.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::camera::{project, CameraParams, ScreenJoint, View};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipIndex {
    pub view: usize,
    pub frame_indices: Vec<usize>,
    pub interval: usize,
    pub fps_tag: f64,
}

/// Every clip of `k` frames at stride `s` over each view, view-major, then
/// interval, then start frame.
pub fn gather_clips(
    num_views: usize,
    frames_per_view: usize,
    k: usize,
    intervals: &[usize],
    base_fps: f64,
) -> Result<Vec<ClipIndex>> {
    if k < 2 {
        return Err(Error::config("clips need at least 2 frames"));
    }
    if intervals.contains(&0) {
        return Err(Error::config("clip interval must be positive"));
    }
    for &s in intervals {
        if frames_per_view < k * s {
            log::warn!("interval {s} yields no {k}-frame clip in {frames_per_view} frames");
        }
    }
    let mut out = Vec::new();
    for view in 0..num_views {
        for &s in intervals {
            let Some(last_start) = frames_per_view.checked_sub(k * s) else {
                continue;
            };
            for start in 0..=last_start {
                out.push(ClipIndex {
                    view,
                    frame_indices: (0..k).map(|i| start + i * s).collect(),
                    interval: s,
                    fps_tag: base_fps / s as f64,
                });
            }
        }
    }
    Ok(out)
}

/// Frames of one view: `(frame index, global joint positions)`.
#[derive(Debug, Clone)]
pub struct ViewFrames {
    pub view: View,
    pub camera: CameraParams,
    pub frames: Vec<(usize, Vec<Vector3<f64>>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRef {
    pub view: View,
    pub frame: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSample {
    pub image: FrameRef,
    pub joints_global: Vec<[f64; 3]>,
    /// Joints in the sample's camera: pixels plus pixel-scaled depth.
    pub joints_screen: Vec<ScreenJoint>,
    pub multiplicity: usize,
    pub is_keyframe: bool,
}

/// Context samples count once, keyframe samples `w` times. Views outside
/// `views_kept` are dropped. An empty keyframe set is an error unless
/// `allow_no_keyframes` is set.
pub fn assemble_estimator_dataset(
    context: &[ViewFrames],
    keyframes: &[ViewFrames],
    w: usize,
    views_kept: &[View],
    allow_no_keyframes: bool,
) -> Result<Vec<EstimatorSample>> {
    if w < 1 {
        return Err(Error::config("keyframe weight must be at least 1"));
    }
    if views_kept.contains(&View::Back) {
        return Err(Error::config("back view cannot be used for estimator training"));
    }
    let kept = |v: &ViewFrames| views_kept.contains(&v.view);
    let has_keyframes = keyframes.iter().filter(|v| kept(v)).any(|v| !v.frames.is_empty());
    if !has_keyframes && !allow_no_keyframes {
        return Err(Error::config(
            "no keyframe samples; set allow_no_keyframes to train on context only",
        ));
    }
    let mut out = Vec::new();
    for (set, is_keyframe) in [(context, false), (keyframes, true)] {
        for vf in set.iter().filter(|v| kept(v)) {
            for (frame, joints) in &vf.frames {
                out.push(EstimatorSample {
                    image: FrameRef {
                        view: vf.view,
                        frame: *frame,
                    },
                    joints_global: joints.iter().map(|p| [p.x, p.y, p.z]).collect(),
                    joints_screen: project(joints, &vf.camera).joints,
                    multiplicity: if is_keyframe { w } else { 1 },
                    is_keyframe,
                });
            }
        }
    }
    Ok(out)
}

/// Sample indices with each sample repeated by its multiplicity.
pub fn expand_weighted(samples: &[EstimatorSample]) -> Vec<usize> {
    samples
        .iter()
        .enumerate()
        .flat_map(|(i, s)| std::iter::repeat_n(i, s.multiplicity))
        .collect()
}
