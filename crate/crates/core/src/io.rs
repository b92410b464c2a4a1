//! JSON persistence for motion sequences.
//!
//! ```json
//! { "fps": 30,
//!   "skeleton": [ {"name": "hip", "parent": null, "offset": [0, 0, 0]}, ... ],
//!   "frames": [ {"root": [x, y, z], "rotations": [[w, x, y, z], ...]}, ... ],
//!   "keyframes": [60, 90],
//!   "context_length": 60 }
//! ```

use std::fs;
use std::path::Path;

use log::warn;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{MotionSequence, Pose};
use crate::quat::Quat;
use crate::skeleton::{Joint, Skeleton};

/// Stored quaternions further than this from unit norm trigger a warning
/// when loaded (they are always re-normalized).
pub const NORM_DRIFT_WARNING: f64 = 1e-4;

#[derive(Serialize, Deserialize)]
struct JointRecord {
    name: String,
    parent: Option<usize>,
    offset: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct FrameRecord {
    root: [f64; 3],
    rotations: Vec<[f64; 4]>,
}

#[derive(Serialize, Deserialize)]
struct MotionRecord {
    fps: u32,
    skeleton: Vec<JointRecord>,
    frames: Vec<FrameRecord>,
    keyframes: Vec<usize>,
    context_length: usize,
}

/// Parses motion JSON, returning the motion and any load warnings.
pub fn parse_motion(text: &str, origin: &str) -> Result<(MotionSequence, Vec<String>)> {
    let rec: MotionRecord = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: origin.to_string(),
        context: e.to_string(),
    })?;
    let parse_err = |context: String| Error::Parse {
        path: origin.to_string(),
        context,
    };

    let joints = rec
        .skeleton
        .into_iter()
        .map(|j| Joint::new(j.name, j.parent, Vector3::from(j.offset)))
        .collect();
    let skeleton = Skeleton::new(joints).map_err(|e| parse_err(format!("skeleton: {e}")))?;

    let mut warnings = Vec::new();
    let mut poses = Vec::with_capacity(rec.frames.len());
    for (f, frame) in rec.frames.into_iter().enumerate() {
        if frame.rotations.len() != skeleton.len() {
            return Err(parse_err(format!(
                "frames[{f}].rotations has {} entries, skeleton has {} joints",
                frame.rotations.len(),
                skeleton.len()
            )));
        }
        let mut rotations = Vec::with_capacity(frame.rotations.len());
        for (j, q) in frame.rotations.iter().enumerate() {
            let raw = Quat {
                w: q[0],
                x: q[1],
                y: q[2],
                z: q[3],
            };
            let norm = raw.norm();
            let unit = raw
                .normalized()
                .map_err(|e| parse_err(format!("frames[{f}].rotations[{j}]: {e}")))?;
            // Drift is measured on the squared norm.
            if (norm * norm - 1.0).abs() > NORM_DRIFT_WARNING {
                let msg = format!(
                    "{origin}: frames[{f}].rotations[{j}] has norm {norm:.6}; normalized"
                );
                warn!("{msg}");
                warnings.push(msg);
            }
            rotations.push(unit);
        }
        poses.push(Pose {
            root: Vector3::from(frame.root),
            rotations,
        });
    }
    let motion = MotionSequence::new(skeleton, rec.fps, poses, rec.keyframes, rec.context_length)
        .map_err(|e| parse_err(e.to_string()))?;
    Ok((motion, warnings))
}

pub fn motion_to_json(motion: &MotionSequence) -> String {
    let rec = MotionRecord {
        fps: motion.fps,
        skeleton: motion
            .skeleton
            .joints()
            .iter()
            .map(|j| JointRecord {
                name: j.name.clone(),
                parent: j.parent,
                offset: j.offset.into(),
            })
            .collect(),
        frames: motion
            .poses
            .iter()
            .map(|p| FrameRecord {
                root: p.root.into(),
                rotations: p.rotations.iter().map(|q| q.to_array()).collect(),
            })
            .collect(),
        keyframes: motion.keyframe_indices.clone(),
        context_length: motion.context_length,
    };
    serde_json::to_string_pretty(&rec).expect("motion records always serialize")
}

pub fn load_motion(path: impl AsRef<Path>) -> Result<MotionSequence> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_motion(&text, &path.display().to_string()).map(|(m, _)| m)
}

pub fn save_motion(motion: &MotionSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, motion_to_json(motion)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::toy_scene;

    #[test]
    fn round_trip_is_identity() {
        let m = toy_scene().motion;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_motion(&m, &path).unwrap();
        let back = load_motion(&path).unwrap();
        assert_eq!(back.fps, m.fps);
        assert_eq!(back.keyframe_indices, m.keyframe_indices);
        assert_eq!(back.context_length, m.context_length);
        assert!(back.skeleton.same_structure(&m.skeleton));
        for (a, b) in back.poses.iter().zip(&m.poses) {
            assert!((a.root - b.root).norm() <= 1e-9);
            for (qa, qb) in a.rotations.iter().zip(&b.rotations) {
                let d: f64 = qa.to_array().iter().zip(qb.to_array()).map(|(x, y)| (x - y).abs()).sum();
                assert!(d <= 1e-9);
            }
        }
    }

    #[test]
    fn missing_skeleton_names_the_key() {
        let text = r#"{"fps": 30, "frames": [], "keyframes": [], "context_length": 0}"#;
        let err = parse_motion(text, "inline").unwrap_err();
        match err {
            Error::Parse { context, .. } => assert!(context.contains("skeleton"), "{context}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn drifted_quaternion_is_normalized_with_warning() {
        let text = r#"{"fps": 30,
            "skeleton": [{"name": "root", "parent": null, "offset": [0, 0, 0]}],
            "frames": [{"root": [0, 0, 0], "rotations": [[1.00005, 0, 0, 0]]}],
            "keyframes": [0], "context_length": 1}"#;
        let (m, warnings) = parse_motion(text, "inline").unwrap();
        assert_eq!(warnings.len(), 1);
        assert!((m.poses[0].rotations[0].norm() - 1.0).abs() < 1e-12);

        let clean = text.replace("1.00005", "1.0");
        let (_, warnings) = parse_motion(&clean, "inline").unwrap();
        assert!(warnings.is_empty());
    }

    #[test]
    fn bad_field_reports_location() {
        let text = r#"{"fps": "thirty", "skeleton": [], "frames": [], "keyframes": [], "context_length": 0}"#;
        let err = parse_motion(text, "inline").unwrap_err().to_string();
        assert!(err.contains("line"), "{err}");
    }
}
