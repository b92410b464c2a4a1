//! Two-stage guided generation: a coarse 5 fps pass over sliding 3 s windows,
//! then a fine 15 fps pass over 1 s windows.
//!
//! Time is measured in ticks of 1/30 s so both grids are exact.

use std::collections::{BTreeMap, BTreeSet};

use anymole_core::error::{Error, Result};
use anymole_core::image::Image;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::VideoBackend;
use crate::guidance::{generate_segment, GuidanceSpec};
use crate::latent::SEGMENT_FRAMES;

pub const TICKS_PER_SECOND: usize = 30;
pub const COARSE_FPS: u32 = 5;
pub const FINE_FPS: u32 = 15;
pub const COARSE_SEGMENT_SECONDS: usize = 3;

pub fn tick_step(fps: u32) -> usize {
    TICKS_PER_SECOND / fps as usize
}

/// Nearest multiple of `step`, ties rounding up.
pub fn snap(tick: usize, step: usize) -> usize {
    (tick + step / 2) / step * step
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageKind {
    Coarse,
    Fine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum Provenance {
    Context,
    Keyframe,
    Coarse { segment: usize },
    Fine { segment: usize },
    Held { from_tick: usize },
}

impl Provenance {
    pub fn is_input(self) -> bool {
        matches!(self, Provenance::Context | Provenance::Keyframe)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentPlan {
    pub index: usize,
    pub start_tick: usize,
    pub fps: u32,
    /// Segment frame indices that carry guidance, endpoints included.
    pub guided: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferencePlan {
    pub stage: StageKind,
    pub segments: Vec<SegmentPlan>,
    pub expected_calls: usize,
    /// Keyframe ticks moved onto the stage grid, as `(from, to)`.
    pub snapped: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStagePlan {
    pub total_seconds: usize,
    pub context_seconds: usize,
    pub coarse: InferencePlan,
    pub fine: InferencePlan,
    pub total_calls: usize,
}

fn check_total(total_seconds: usize) -> Result<()> {
    if total_seconds < COARSE_SEGMENT_SECONDS {
        return Err(Error::config(format!(
            "two-stage generation needs at least {COARSE_SEGMENT_SECONDS} s, got {total_seconds}"
        )));
    }
    Ok(())
}

fn segment_ticks(start: usize, fps: u32) -> impl Iterator<Item = usize> {
    let step = tick_step(fps);
    (0..SEGMENT_FRAMES).map(move |i| start + i * step)
}

fn guided_indices(start: usize, fps: u32, known: &BTreeSet<usize>) -> Vec<usize> {
    segment_ticks(start, fps)
        .enumerate()
        .filter(|&(i, tick)| i == 0 || i == SEGMENT_FRAMES - 1 || known.contains(&tick))
        .map(|(i, _)| i)
        .collect()
}

fn snap_all(ticks: &[usize], step: usize) -> (Vec<usize>, Vec<(usize, usize)>) {
    let mut out = Vec::new();
    let mut moved = Vec::new();
    for &t in ticks {
        let s = snap(t, step);
        if s != t {
            log::warn!("keyframe at tick {t} snapped to {s}");
            moved.push((t, s));
        }
        out.push(s);
    }
    (out, moved)
}

/// Coarse segments for `t_vid` in `0..=total-3`. Frames generated by a segment
/// become guidance for the windows after it.
pub fn plan_coarse(total_seconds: usize, context_ticks: &[usize], keyframe_ticks: &[usize]) -> Result<InferencePlan> {
    check_total(total_seconds)?;
    let (keys, snapped) = snap_all(keyframe_ticks, tick_step(COARSE_FPS));
    let mut known: BTreeSet<usize> = context_ticks.iter().chain(&keys).copied().collect();
    let mut segments = Vec::new();
    for index in 0..=total_seconds - COARSE_SEGMENT_SECONDS {
        let start = index * TICKS_PER_SECOND;
        segments.push(SegmentPlan {
            index,
            start_tick: start,
            fps: COARSE_FPS,
            guided: guided_indices(start, COARSE_FPS, &known),
        });
        known.extend(segment_ticks(start, COARSE_FPS));
    }
    Ok(InferencePlan {
        stage: StageKind::Coarse,
        expected_calls: segments.len(),
        segments,
        snapped,
    })
}

/// Fine segments for `t_vid` in `0..total`, guided by the full coarse grid,
/// keyframes and context frames on the 15 fps grid.
pub fn plan_fine(total_seconds: usize, context_ticks: &[usize], keyframe_ticks: &[usize]) -> Result<InferencePlan> {
    check_total(total_seconds)?;
    let (keys, snapped) = snap_all(keyframe_ticks, tick_step(FINE_FPS));
    let end = total_seconds * TICKS_PER_SECOND;
    let mut known: BTreeSet<usize> = (0..=end).step_by(tick_step(COARSE_FPS)).collect();
    known.extend(keys);
    known.extend(context_ticks.iter().filter(|t| *t % tick_step(FINE_FPS) == 0));
    let segments: Vec<_> = (0..total_seconds)
        .map(|index| {
            let start = index * TICKS_PER_SECOND;
            SegmentPlan {
                index,
                start_tick: start,
                fps: FINE_FPS,
                guided: guided_indices(start, FINE_FPS, &known),
            }
        })
        .collect();
    Ok(InferencePlan {
        stage: StageKind::Fine,
        expected_calls: segments.len(),
        segments,
        snapped,
    })
}

/// Plan for the default layout: 30 fps context over the first
/// `context_seconds`, then one keyframe per second up to `total_seconds`.
pub fn plan_two_stage(total_seconds: usize, context_seconds: usize) -> Result<TwoStagePlan> {
    if context_seconds > total_seconds {
        return Err(Error::config("context is longer than the video"));
    }
    let context: Vec<usize> = (0..context_seconds * TICKS_PER_SECOND).collect();
    let keys: Vec<usize> = (context_seconds..=total_seconds).map(|s| s * TICKS_PER_SECOND).collect();
    let coarse = plan_coarse(total_seconds, &context, &keys)?;
    let fine = plan_fine(total_seconds, &context, &keys)?;
    Ok(TwoStagePlan {
        total_seconds,
        context_seconds,
        total_calls: coarse.expected_calls + fine.expected_calls,
        coarse,
        fine,
    })
}

#[derive(Debug, Clone)]
pub struct Frame {
    pub tick: usize,
    pub image: Image,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy)]
pub struct StageInputs<'a> {
    /// Context frames at their 30 fps ticks.
    pub context: &'a [(usize, Image)],
    pub keyframes: &'a [(usize, Image)],
    pub total_seconds: usize,
    pub text: &'a str,
    pub seed: u64,
}

impl StageInputs<'_> {
    fn context_ticks(&self) -> Vec<usize> {
        self.context.iter().map(|(t, _)| *t).collect()
    }

    fn keyframe_ticks(&self) -> Vec<usize> {
        self.keyframes.iter().map(|(t, _)| *t).collect()
    }
}

#[derive(Debug, Clone)]
pub struct StageOutput {
    pub frames: Vec<Frame>,
    pub plan: InferencePlan,
    pub calls: usize,
}

type Timeline = BTreeMap<usize, (Image, Provenance)>;

fn segment_rng(seed: u64, stage: StageKind, index: usize) -> ChaCha8Rng {
    let tag = match stage {
        StageKind::Coarse => 1u64,
        StageKind::Fine => 2u64,
    };
    ChaCha8Rng::seed_from_u64(seed ^ (tag << 40) ^ index as u64)
}

fn run_segment<B: VideoBackend + ?Sized>(
    model: &B,
    timeline: &Timeline,
    seg: &SegmentPlan,
    stage: StageKind,
    inputs: &StageInputs,
) -> Result<Vec<Image>> {
    let ticks: Vec<usize> = segment_ticks(seg.start_tick, seg.fps).collect();
    let endpoint = |tick: usize| {
        timeline
            .get(&tick)
            .map(|(img, _)| img)
            .ok_or_else(|| Error::contract(format!("no frame at tick {tick} for a segment endpoint")))
    };
    let first = endpoint(ticks[0])?;
    let last = endpoint(ticks[SEGMENT_FRAMES - 1])?;
    let images: BTreeMap<usize, &Image> = seg
        .guided
        .iter()
        .filter(|&&i| i != 0 && i != SEGMENT_FRAMES - 1)
        .map(|&i| {
            timeline
                .get(&ticks[i])
                .map(|(img, _)| (i, img))
                .ok_or_else(|| Error::contract(format!("planned guidance at tick {} is missing", ticks[i])))
        })
        .collect::<Result<_>>()?;
    let spec = GuidanceSpec::from_images(model, &images)?;
    let mut rng = segment_rng(inputs.seed, stage, seg.index);
    let out = generate_segment(model, first, last, &spec, inputs.text, seg.fps, &mut rng)?;
    Ok(out.frames)
}

fn collect(timeline: &Timeline, total_seconds: usize, fps: u32) -> Result<Vec<Frame>> {
    (0..=total_seconds * TICKS_PER_SECOND)
        .step_by(tick_step(fps))
        .map(|tick| {
            timeline
                .get(&tick)
                .map(|(image, provenance)| Frame {
                    tick,
                    image: image.clone(),
                    provenance: *provenance,
                })
                .ok_or_else(|| Error::contract(format!("tick {tick} was never generated")))
        })
        .collect()
}

/// Autoregressive 5 fps generation over `[t, t + 3]` windows.
///
/// Inputs keep their original images; a later segment overwrites generated
/// frames it shares with an earlier one.
pub fn coarse_stage<B: VideoBackend + ?Sized>(model: &B, inputs: &StageInputs) -> Result<StageOutput> {
    let plan = plan_coarse(inputs.total_seconds, &inputs.context_ticks(), &inputs.keyframe_ticks())?;
    let mut timeline: Timeline = inputs
        .context
        .iter()
        .map(|(t, img)| (*t, (img.clone(), Provenance::Context)))
        .collect();
    for (t, img) in inputs.keyframes {
        timeline.insert(snap(*t, tick_step(COARSE_FPS)), (img.clone(), Provenance::Keyframe));
    }
    for seg in &plan.segments {
        let frames = run_segment(model, &timeline, seg, StageKind::Coarse, inputs)
            .map_err(|e| e.context(format!("coarse segment {}", seg.index)))?;
        for (tick, img) in segment_ticks(seg.start_tick, seg.fps).zip(frames) {
            if timeline.get(&tick).is_some_and(|(_, p)| p.is_input()) {
                continue;
            }
            timeline.insert(tick, (img, Provenance::Coarse { segment: seg.index }));
        }
    }
    Ok(StageOutput {
        frames: collect(&timeline, inputs.total_seconds, COARSE_FPS)?,
        calls: plan.segments.len(),
        plan,
    })
}

/// 15 fps generation over 1 s windows guided by the coarse video.
pub fn fine_stage<B: VideoBackend + ?Sized>(model: &B, coarse: &[Frame], inputs: &StageInputs) -> Result<StageOutput> {
    let plan = plan_fine(inputs.total_seconds, &inputs.context_ticks(), &inputs.keyframe_ticks())?;
    let step = tick_step(FINE_FPS);
    let mut guide: Timeline = coarse
        .iter()
        .map(|f| (f.tick, (f.image.clone(), f.provenance)))
        .collect();
    for (t, img) in inputs.context.iter().filter(|(t, _)| t % step == 0) {
        guide.insert(*t, (img.clone(), Provenance::Context));
    }
    for (t, img) in inputs.keyframes {
        guide.insert(snap(*t, step), (img.clone(), Provenance::Keyframe));
    }
    let mut out: Timeline = Timeline::new();
    for seg in &plan.segments {
        let frames = run_segment(model, &guide, seg, StageKind::Fine, inputs)
            .map_err(|e| e.context(format!("fine segment {}", seg.index)))?;
        for (tick, img) in segment_ticks(seg.start_tick, seg.fps).zip(frames) {
            let entry = match guide.get(&tick) {
                Some((orig, p)) if p.is_input() => (orig.clone(), *p),
                _ => (img, Provenance::Fine { segment: seg.index }),
            };
            out.insert(tick, entry);
        }
    }
    Ok(StageOutput {
        frames: collect(&out, inputs.total_seconds, FINE_FPS)?,
        calls: plan.segments.len(),
        plan,
    })
}

/// 15 fps video that repeats the latest coarse frame, for runs without the fine stage.
pub fn hold_coarse(coarse: &[Frame], total_seconds: usize) -> Vec<Frame> {
    (0..=total_seconds * TICKS_PER_SECOND)
        .step_by(tick_step(FINE_FPS))
        .filter_map(|tick| {
            let src = coarse.iter().rev().find(|f| f.tick <= tick)?;
            Some(Frame {
                tick,
                image: src.image.clone(),
                provenance: if src.tick == tick {
                    src.provenance
                } else {
                    Provenance::Held { from_tick: src.tick }
                },
            })
        })
        .collect()
}
