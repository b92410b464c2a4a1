//! Per-frame descent and the sequence driver.

use std::collections::BTreeMap;

use anymole_core::optim::Adam;
use anymole_core::{slerp, CameraParams, Error, Image, MotionSequence, Pose, RenderStyle, Result, Skeleton};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::estimator::JointEstimator;
use crate::loss::{mimic_loss, pack, renormalize, unpack, FrameTargets, LossTerms, MimicConfig, MimicScene};
use crate::schedule::{plan_sequence, FrameTask, InitSource};

#[derive(Debug, Clone)]
pub struct FrameResult {
    pub pose: Pose,
    pub initial: LossTerms,
    pub best: LossTerms,
    /// Total loss before each update.
    pub trace: Vec<f64>,
    /// The loss ran past ten times its initial value; `pose` is the initialization.
    pub diverged: bool,
}

/// Adam on `[root, raw quaternions]`, renormalizing after every update and
/// returning the lowest-loss iterate.
pub fn mimic_frame(init: &Pose, scene: &MimicScene, targets: &FrameTargets, config: &MimicConfig) -> Result<FrameResult> {
    let mut params = pack(init);
    let (initial, _) = mimic_loss(&params, scene, targets, config)?;
    let mut best = (initial, params.clone());
    let mut adam_p = Adam::new(3, config.lr_position);
    let mut adam_r = Adam::new(params.len() - 3, config.lr_rotation);
    let mut trace = Vec::with_capacity(config.steps_per_sequence + 1);
    for _ in 0..config.steps_per_sequence {
        let (terms, grad) = mimic_loss(&params, scene, targets, config)?;
        trace.push(terms.total);
        if terms.total > 10.0 * initial.total && initial.total > 0.0 {
            return Ok(FrameResult {
                pose: init.clone(),
                initial,
                best: initial,
                trace,
                diverged: true,
            });
        }
        if terms.total < best.0.total {
            best = (terms, params.clone());
        }
        let (p, r) = params.split_at_mut(3);
        adam_p.step(p, &grad[..3]);
        adam_r.step(r, &grad[3..]);
        renormalize(&mut params);
    }
    let (last, _) = mimic_loss(&params, scene, targets, config)?;
    trace.push(last.total);
    if last.total < best.0.total {
        best = (last, params);
    }
    Ok(FrameResult {
        pose: unpack(&best.1)?,
        initial,
        best: best.0,
        trace,
        diverged: false,
    })
}

/// Keyframes and generated frames on one frame grid starting at the first keyframe.
#[derive(Debug, Clone)]
pub struct MimicInput {
    pub skeleton: Skeleton,
    pub fps: u32,
    /// Sorted `(frame, pose)`; the first keyframe must be frame 0.
    pub keyframes: Vec<(usize, Pose)>,
    pub frames: BTreeMap<usize, Image>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame: usize,
    pub round: usize,
    pub batch: usize,
    pub initial: LossTerms,
    pub best: LossTerms,
    pub diverged: bool,
}

#[derive(Debug, Clone)]
pub struct MimicOutcome {
    pub motion: MotionSequence,
    pub records: Vec<FrameRecord>,
    pub rounds: usize,
    pub repetitions: usize,
}

impl MimicOutcome {
    /// One line per optimized frame, in frame order.
    pub fn loss_csv(&self) -> String {
        let mut rows = self.records.clone();
        rows.sort_by_key(|r| r.frame);
        let mut out = String::from(
            "frame,round,batch,initial_total,best_total,joint,image,position,rotation,diverged\n",
        );
        for r in rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.frame,
                r.round,
                r.batch,
                r.initial.total,
                r.best.total,
                r.best.joint,
                r.best.image,
                r.best.position,
                r.best.rotation,
                r.diverged
            ));
        }
        out
    }
}

fn initial_pose(task: &FrameTask, poses: &BTreeMap<usize, Pose>) -> Result<Pose> {
    let get = |f: usize| {
        poses
            .get(&f)
            .ok_or_else(|| Error::contract(format!("frame {} has no pose to start from", f)))
    };
    match task.init {
        InitSource::Frame(f) => Ok(get(f)?.clone()),
        InitSource::Between(a, b) => {
            let (pa, pb) = (get(a)?, get(b)?);
            let rotations = pa
                .rotations
                .iter()
                .zip(&pb.rotations)
                .map(|(x, y)| slerp(x, y, 0.5))
                .collect::<Result<_>>()?;
            Ok(Pose {
                root: (pa.root + pb.root) / 2.0,
                rotations,
            })
        }
    }
}

/// Optimizes every frame between consecutive keyframes, inward, one view.
pub fn mimic_sequence(
    input: &MimicInput,
    estimator: &dyn JointEstimator,
    camera: &CameraParams,
    style: &RenderStyle,
    config: &MimicConfig,
) -> Result<MimicOutcome> {
    config.validate()?;
    let keys: Vec<usize> = input.keyframes.iter().map(|(k, _)| *k).collect();
    if keys.first() != Some(&0) || keys.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::contract("keyframes must be sorted, unique and start at frame 0"));
    }
    let last = *keys.last().expect("non-empty");
    for f in 0..=last {
        if !keys.contains(&f) && !input.frames.contains_key(&f) {
            return Err(Error::contract(format!("video frame {f} is missing")));
        }
    }
    let scene = MimicScene {
        skeleton: &input.skeleton,
        camera,
        style,
    };
    let key_pose = |k: usize| &input.keyframes.iter().find(|(f, _)| *f == k).expect("keyframe").1;
    let mut poses: BTreeMap<usize, Pose> = input.keyframes.iter().cloned().collect();
    let plan = plan_sequence(&keys, config.batch_size);
    let mut records = Vec::new();
    let mut batch_no = 0;
    for (round, batches) in plan.rounds.iter().enumerate() {
        for batch in batches {
            let jobs = batch
                .iter()
                .map(|task| -> Result<(Pose, FrameTargets)> {
                    let image = &input.frames[&task.frame];
                    let joints = estimator.estimate(task.frame, image)?;
                    let (ka, kb) = (key_pose(task.keys.0), key_pose(task.keys.1));
                    let t = task.interpolation_weight();
                    let targets = FrameTargets {
                        luma: image.luminance(),
                        joints,
                        root: ka.root * (1.0 - t) + kb.root * t,
                        rotations: poses[&task.rotation_ref].rotations.clone(),
                    };
                    Ok((initial_pose(task, &poses)?, targets))
                })
                .collect::<Result<Vec<_>>>()?;
            // Tasks in a batch never read each other's results.
            let results: Vec<Result<FrameResult>> = std::thread::scope(|s| {
                let handles: Vec<_> = jobs
                    .iter()
                    .map(|(init, targets)| s.spawn(|| mimic_frame(init, &scene, targets, config)))
                    .collect();
                handles.into_iter().map(|h| h.join().expect("mimic worker panicked")).collect()
            });
            for (task, res) in batch.iter().zip(results) {
                let res = res.map_err(|e| e.context(format!("frame {}", task.frame)))?;
                if res.diverged {
                    warn!("frame {} diverged; keeping its initialization", task.frame);
                }
                records.push(FrameRecord {
                    frame: task.frame,
                    round,
                    batch: batch_no,
                    initial: res.initial,
                    best: res.best,
                    diverged: res.diverged,
                });
                poses.insert(task.frame, res.pose);
            }
            batch_no += 1;
        }
        info!("mimic round {} of {} done", round + 1, plan.rounds.len());
    }
    let motion = MotionSequence::new(
        input.skeleton.clone(),
        input.fps,
        (0..=last).map(|f| poses.remove(&f).expect("every frame planned")).collect(),
        keys,
        0,
    )?;
    Ok(MimicOutcome {
        motion,
        records,
        rounds: plan.rounds.len(),
        repetitions: plan.repetitions(),
    })
}
