//! Pipeline stages over one run directory.
//!
//! Every stage reads its inputs, checks upstream artifacts against the
//! checksums their producing stage recorded, writes under its own
//! directory, and records what it read and wrote in the run manifest. A
//! stage whose config section, inputs and outputs all still match its
//! record is skipped unless forced.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anymole_core::io::{load_motion, save_motion};
use anymole_core::metrics::{HierarchyFilter, MetricRegistry, MetricReport};
use anymole_core::motion::upsample_motion;
use anymole_core::render::{frame_file_name, render, render_views};
use anymole_core::{clips, Error, Image, MotionSequence, Result, View};
use anymole_diffusion::stages::{hold_coarse, Frame, Provenance};
use anymole_diffusion::{
    checkpoint as backend_checkpoint, coarse_stage, fine_stage, icadapt_pooled, AdaptReport, PooledClip, StageInputs,
    ToyBackend, ToyConfig, SEGMENT_FRAMES,
};
use anymole_estimator::{build_dataset, checkpoint as estimator_checkpoint, train_estimator, SyntheticProvider};
use anymole_mimic::{mimic_sequence, MimicInput, SceneEstimator};
use log::info;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::manifest::{sha256_bytes, sha256_file, RunManifest, StageRecord};

/// Time base shared with the generation planner.
const TICKS_PER_SECOND: usize = 30;
/// Rate of the generated video and of the mimicked motion.
pub const VIDEO_FPS: u32 = 15;

pub const DATASET: &str = "data/dataset.json";
pub const BACKEND: &str = "adapt/backend.json";
pub const BACKEND_BLOB: &str = "adapt/backend.bin";
pub const ADAPT_REPORT: &str = "adapt/report.json";
pub const ESTIMATOR: &str = "estimator/model.json";
pub const ESTIMATOR_BLOB: &str = "estimator/model.bin";
pub const ESTIMATOR_REPORT: &str = "estimator/report.json";
pub const VIDEO: &str = "generate/video.json";
pub const MOTION_15: &str = "mimic/motion_15fps.json";
pub const MOTION_30: &str = "mimic/motion_30fps.json";
pub const LOSS_CSV: &str = "mimic/loss.csv";
pub const MIMIC_REPORT: &str = "mimic/report.json";
pub const METRICS_JSON: &str = "evaluate/metrics.json";
pub const METRICS_CSV: &str = "evaluate/metrics.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    SynthData,
    Adapt,
    TrainEstimator,
    Generate,
    Mimic,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::SynthData,
        Stage::Adapt,
        Stage::TrainEstimator,
        Stage::Generate,
        Stage::Mimic,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::SynthData => "synth-data",
            Stage::Adapt => "adapt",
            Stage::TrainEstimator => "train-estimator",
            Stage::Generate => "generate",
            Stage::Mimic => "mimic",
            Stage::Evaluate => "evaluate",
        }
    }

    /// The config sections whose change invalidates the stage.
    fn config_section(self, c: &RunConfig) -> Value {
        match self {
            Stage::SynthData => json!({"scene": c.scene, "camera": c.camera, "render": c.render, "synth": c.synth}),
            Stage::Adapt => json!({"backend": c.backend, "adapt": c.adapt, "icadapt": c.ablation.icadapt}),
            Stage::TrainEstimator => json!({
                "estimator": c.estimator,
                "train": c.effective_train(),
                "camera": c.camera,
                "center": c.scene.center,
            }),
            Stage::Generate => json!({
                "backend": c.backend,
                "generate": c.generate,
                "view": c.camera.view,
                "fine_stage": c.ablation.fine_stage,
            }),
            Stage::Mimic => json!({"mimic": c.mimic, "camera": c.camera, "render": c.render, "center": c.scene.center}),
            Stage::Evaluate => json!({"evaluate": c.evaluate, "camera": c.camera, "render": c.render, "center": c.scene.center}),
        }
    }

    fn inputs(self) -> Vec<Input> {
        use Input::*;
        match self {
            Stage::SynthData => vec![Motion],
            Stage::Adapt => vec![Artifact(Stage::SynthData, DATASET)],
            Stage::TrainEstimator => vec![Artifact(Stage::SynthData, DATASET), Motion],
            Stage::Generate => vec![
                Artifact(Stage::Adapt, BACKEND),
                Artifact(Stage::Adapt, BACKEND_BLOB),
                Artifact(Stage::SynthData, DATASET),
            ],
            Stage::Mimic => vec![
                Artifact(Stage::TrainEstimator, ESTIMATOR),
                Artifact(Stage::TrainEstimator, ESTIMATOR_BLOB),
                Artifact(Stage::Generate, VIDEO),
                Motion,
            ],
            Stage::Evaluate => vec![Artifact(Stage::Mimic, MOTION_30), Motion],
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::config(format!("unknown stage '{s}'")))
    }
}

#[derive(Debug, Clone, Copy)]
enum Input {
    /// The scene's motion JSON.
    Motion,
    /// A file under the run root written by an earlier stage.
    Artifact(Stage, &'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    UpToDate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFrame {
    pub view: View,
    pub frame: usize,
    pub keyframe: bool,
    pub file: String,
    pub sha256: String,
}

/// Index of the rendered context and keyframe images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub fps: u32,
    pub frame_count: usize,
    pub context_length: usize,
    pub keyframes: Vec<usize>,
    pub views: Vec<View>,
    pub image: [u32; 2],
    pub motion_sha256: String,
    pub frames: Vec<DatasetFrame>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoFrame {
    pub index: usize,
    pub tick: usize,
    pub provenance: Provenance,
    pub file: String,
    pub sha256: String,
}

/// Index of the generated 15 fps video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoManifest {
    pub fps: u32,
    pub view: View,
    pub total_seconds: usize,
    pub coarse_calls: usize,
    pub fine_calls: usize,
    pub frames: Vec<VideoFrame>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MimicReport {
    /// Source-motion frame that local frame 0 corresponds to.
    pub first_keyframe: usize,
    pub rounds: usize,
    pub repetitions: usize,
    pub diverged_frames: Vec<usize>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value).expect("records serialize");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        context: e.to_string(),
    })
}

/// First frame of the in-betweening span: the first keyframe at or after
/// the end of the context.
pub fn span_start(motion: &MotionSequence) -> Result<usize> {
    motion
        .keyframe_indices
        .iter()
        .copied()
        .find(|&k| k + 1 >= motion.context_length)
        .ok_or_else(|| Error::config("motion has no keyframe after its context"))
}

fn ticks_per_frame(fps: u32) -> Result<usize> {
    if fps == 0 || TICKS_PER_SECOND % fps as usize != 0 {
        return Err(Error::config(format!("motion rate {fps} fps does not divide the 30 fps time base")));
    }
    Ok(TICKS_PER_SECOND / fps as usize)
}

pub struct Run {
    pub root: PathBuf,
    pub config: RunConfig,
    pub manifest: RunManifest,
    pub force: bool,
}

impl Run {
    pub fn open(config: RunConfig, force: bool) -> Result<Run> {
        let root = config.output_root();
        let manifest = RunManifest::open(&root, &config)?;
        Ok(Run {
            root,
            config,
            manifest,
            force,
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn rel(&self, path: &Path) -> String {
        path.strip_prefix(&self.root)
            .map(|p| p.to_string_lossy().replace('\\', "/"))
            .unwrap_or_else(|_| path.display().to_string())
    }

    fn motion_path(&self) -> &Path {
        &self.config.scene.motion
    }

    fn load_motion(&self) -> Result<MotionSequence> {
        let path = self.motion_path();
        if !path.exists() {
            return Err(Error::config(format!("motion file {} does not exist", path.display())));
        }
        load_motion(path)
    }

    /// Checks an input and returns its manifest key and digest.
    fn check_input(&self, stage: Stage, input: Input) -> Result<(String, String)> {
        match input {
            Input::Motion => {
                let p = self.motion_path();
                if !p.exists() {
                    return Err(Error::config(format!("motion file {} does not exist", p.display())));
                }
                Ok((p.display().to_string(), sha256_file(p)?))
            }
            Input::Artifact(producer, rel) => {
                let p = self.path(rel);
                let recorded = self.manifest.stages.get(producer.name()).and_then(|r| r.outputs.get(rel));
                if !p.exists() || recorded.is_none() {
                    return Err(Error::config(format!(
                        "stage '{}' needs {rel} from stage '{}'; run `anymole {}` first",
                        stage.name(),
                        producer.name(),
                        producer.name()
                    )));
                }
                let sum = sha256_file(&p)?;
                if Some(&sum) != recorded {
                    return Err(Error::config(format!(
                        "{rel} changed after stage '{}' wrote it; re-run `anymole {}`",
                        producer.name(),
                        producer.name()
                    )));
                }
                Ok((rel.to_string(), sum))
            }
        }
    }

    fn up_to_date(&self, record: &StageRecord, config_sha: &str, inputs: &BTreeMap<String, String>) -> bool {
        record.config_sha256 == config_sha
            && &record.inputs == inputs
            && record
                .outputs
                .iter()
                .all(|(rel, sum)| sha256_file(&self.path(rel)).is_ok_and(|s| &s == sum))
    }

    /// Runs one stage unless its record shows it is current.
    pub fn execute(&mut self, stage: Stage) -> Result<Outcome> {
        let inputs = stage
            .inputs()
            .into_iter()
            .map(|i| self.check_input(stage, i))
            .collect::<Result<BTreeMap<_, _>>>()?;
        let config_sha = sha256_bytes(stage.config_section(&self.config).to_string().as_bytes());
        if !self.force {
            if let Some(rec) = self.manifest.stages.get(stage.name()) {
                if self.up_to_date(rec, &config_sha, &inputs) {
                    info!("{}: up to date", stage.name());
                    self.manifest.save(&self.root)?;
                    return Ok(Outcome::UpToDate);
                }
            }
        }
        info!("{}: running", stage.name());
        let start = Instant::now();
        let written = match stage {
            Stage::SynthData => self.synth_data(),
            Stage::Adapt => self.adapt(),
            Stage::TrainEstimator => self.train_estimator(),
            Stage::Generate => self.generate(),
            Stage::Mimic => self.mimic(),
            Stage::Evaluate => self.evaluate(),
        }
        .map_err(|e| e.context(stage.name()))?;
        let outputs = written
            .iter()
            .map(|p| Ok((self.rel(p), sha256_file(p)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        let record = StageRecord {
            config_sha256: config_sha,
            inputs,
            outputs,
            seconds: start.elapsed().as_secs_f64(),
        };
        self.manifest.stages.insert(stage.name().to_string(), record);
        self.manifest.save(&self.root)?;
        info!("{}: done in {:.1} s", stage.name(), start.elapsed().as_secs_f64());
        Ok(Outcome::Ran)
    }

    fn dataset(&self) -> Result<DatasetManifest> {
        read_json(&self.path(DATASET))
    }

    /// Loads an image after checking it against its recorded digest.
    fn load_checked(&self, rel: &str, sha: &str) -> Result<Image> {
        let p = self.path(rel);
        if sha256_file(&p)? != sha {
            return Err(Error::config(format!("{rel} does not match its recorded checksum")));
        }
        Image::load_png(&p)
    }

    fn synth_data(&self) -> Result<Vec<PathBuf>> {
        let motion = self.load_motion()?;
        let ctx = motion.context_length;
        let cams = self
            .config
            .synth
            .views
            .iter()
            .map(|&v| Ok((v, self.config.view_camera(v)?)))
            .collect::<Result<Vec<_>>>()?;
        let dir = self.path("data");
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        let context = render_views(&motion.slice(0..ctx)?, &cams, &self.config.render, &dir.join("context"))?;
        if let Some((view, i, msg)) = context.failures.first() {
            return Err(Error::Image(format!(
                "{} context frame(s) failed, first {view} frame {i}: {msg}",
                context.failures.len()
            )));
        }
        let mut files: Vec<(View, usize, bool, PathBuf)> = context
            .written
            .into_iter()
            .map(|(v, i, p)| (v, i, false, p))
            .collect();
        for (view, cam) in &cams {
            for &k in &motion.keyframe_indices {
                let path = dir.join("keyframes").join(view.name()).join(frame_file_name(k));
                render(&motion.skeleton, &motion.poses[k], cam, &self.config.render)?
                    .save_png(&path)
                    .map_err(|e| e.context(format!("{view} keyframe {k}")))?;
                files.push((*view, k, true, path));
            }
        }
        let frames = files
            .iter()
            .map(|(view, frame, keyframe, path)| {
                Ok(DatasetFrame {
                    view: *view,
                    frame: *frame,
                    keyframe: *keyframe,
                    file: self.rel(path),
                    sha256: sha256_file(path)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let manifest = DatasetManifest {
            fps: motion.fps,
            frame_count: motion.len(),
            context_length: ctx,
            keyframes: motion.keyframe_indices.clone(),
            views: self.config.synth.views.clone(),
            image: self.config.camera.image,
            motion_sha256: sha256_file(self.motion_path())?,
            frames,
        };
        info!(
            "rendered {} views x {ctx} context frames and {} keyframes",
            manifest.views.len(),
            manifest.keyframes.len()
        );
        let path = self.path(DATASET);
        write_json(&path, &manifest)?;
        let mut out: Vec<PathBuf> = files.into_iter().map(|f| f.3).collect();
        out.push(path);
        Ok(out)
    }

    fn adapt(&self) -> Result<Vec<PathBuf>> {
        let data = self.dataset()?;
        let views = &data.views[..self.config.adapt.views.min(data.views.len())];
        let ctx = data.context_length;
        let mut pool = Vec::with_capacity(views.len() * ctx);
        for view in views {
            let mut frames: Vec<&DatasetFrame> = data
                .frames
                .iter()
                .filter(|f| f.view == *view && !f.keyframe)
                .collect();
            frames.sort_by_key(|f| f.frame);
            if frames.len() != ctx {
                return Err(Error::contract(format!("{view} has {} context frames, expected {ctx}", frames.len())));
            }
            for f in frames {
                pool.push(self.load_checked(&f.file, &f.sha256)?);
            }
        }
        let mut model = ToyBackend::new(self.config.backend.clone())?;
        let report: Option<AdaptReport> = if self.config.ablation.icadapt {
            let index = clips::gather_clips(views.len(), ctx, SEGMENT_FRAMES, &self.config.adapt.intervals, data.fps as f64)?;
            let clips = index
                .iter()
                .map(|c| {
                    if data.fps as usize % c.interval != 0 {
                        return Err(Error::config(format!("interval {} does not divide {} fps", c.interval, data.fps)));
                    }
                    Ok(PooledClip {
                        frames: c.frame_indices.iter().map(|f| c.view * ctx + f).collect(),
                        fps: data.fps / c.interval as u32,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            info!("adapting on {} clips from {} views", clips.len(), views.len());
            let refs: Vec<&Image> = pool.iter().collect();
            Some(icadapt_pooled(&mut model, &refs, &clips, &self.config.adapt)?)
        } else {
            info!("adaptation disabled; keeping the initial backend");
            None
        };
        let backend = self.path(BACKEND);
        let metadata = json!({"backend": self.config.backend, "adapted": report.is_some()});
        backend_checkpoint::save(anymole_diffusion::VideoBackend::parameters(&model), metadata, &backend)?;
        let report_path = self.path(ADAPT_REPORT);
        write_json(&report_path, &json!({"adapted": report.is_some(), "report": report}))?;
        Ok(vec![backend.clone(), backend_checkpoint::blob_path(&backend), report_path])
    }

    fn train_estimator(&self) -> Result<Vec<PathBuf>> {
        let data = self.dataset()?;
        let motion = self.load_motion()?;
        if sha256_file(self.motion_path())? != data.motion_sha256 {
            return Err(Error::config("motion changed since synth-data; re-run `anymole synth-data`"));
        }
        let train = self.config.effective_train();
        let cams = train
            .views
            .iter()
            .map(|&v| Ok((v, self.config.view_camera(v)?)))
            .collect::<Result<Vec<_>>>()?;
        let files: BTreeMap<(View, usize), &DatasetFrame> = data.frames.iter().map(|f| ((f.view, f.frame), f)).collect();
        let load = |view: View, _: &anymole_core::CameraParams, frame: usize| -> Result<Image> {
            let f = files
                .get(&(view, frame))
                .ok_or_else(|| Error::contract(format!("dataset has no {view} frame {frame}")))?;
            self.load_checked(&f.file, &f.sha256)
        };
        let dataset = build_dataset(&motion, &cams, &train, &load)?;
        let provider = SyntheticProvider::new(self.config.estimator.features.clone(), 3)?;
        let (model, report) = train_estimator(self.config.estimator.model.clone(), &dataset, &provider, &train)?;
        let path = self.path(ESTIMATOR);
        estimator_checkpoint::save(&model, &provider, Some(&train), &path)?;
        let report_path = self.path(ESTIMATOR_REPORT);
        write_json(&report_path, &report)?;
        Ok(vec![path.clone(), estimator_checkpoint::blob_path(&path), report_path])
    }

    fn generate(&self) -> Result<Vec<PathBuf>> {
        let data = self.dataset()?;
        let (params, sidecar) = backend_checkpoint::load(&self.path(BACKEND))?;
        let stored: ToyConfig = serde_json::from_value(sidecar.metadata["backend"].clone()).map_err(|e| Error::Parse {
            path: BACKEND.into(),
            context: e.to_string(),
        })?;
        if stored != self.config.backend {
            return Err(Error::config("backend config differs from the adapted checkpoint; re-run `anymole adapt`"));
        }
        let model = ToyBackend::new(stored)?.with_parameters(params)?;
        let view = self.config.main_view()?;
        let step = ticks_per_frame(data.fps)?;
        if (data.frame_count - 1) % data.fps as usize != 0 {
            return Err(Error::config("motion does not span a whole number of seconds"));
        }
        let total_seconds = (data.frame_count - 1) / data.fps as usize;
        let mut context = Vec::new();
        let mut keyframes = Vec::new();
        for f in data.frames.iter().filter(|f| f.view == view) {
            let image = self.load_checked(&f.file, &f.sha256)?;
            if f.keyframe {
                keyframes.push((f.frame * step, image));
            } else {
                context.push((f.frame * step, image));
            }
        }
        if context.is_empty() {
            return Err(Error::config(format!("synth-data rendered no {view} frames")));
        }
        let inputs = StageInputs {
            context: &context,
            keyframes: &keyframes,
            total_seconds,
            text: &self.config.generate.text,
            seed: self.config.generate.seed,
        };
        let coarse = coarse_stage(&model, &inputs)?;
        let (frames, fine_calls): (Vec<Frame>, usize) = if self.config.ablation.fine_stage {
            let fine = fine_stage(&model, &coarse.frames, &inputs)?;
            (fine.frames, fine.calls)
        } else {
            info!("fine stage disabled; holding coarse frames");
            (hold_coarse(&coarse.frames, total_seconds), 0)
        };
        let video_step = TICKS_PER_SECOND / VIDEO_FPS as usize;
        let dir = self.path("generate/frames");
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        let mut out = Vec::new();
        let mut entries = Vec::new();
        for f in &frames {
            let index = f.tick / video_step;
            let path = dir.join(frame_file_name(index));
            f.image.save_png(&path)?;
            entries.push(VideoFrame {
                index,
                tick: f.tick,
                provenance: f.provenance,
                file: self.rel(&path),
                sha256: sha256_file(&path)?,
            });
            out.push(path);
        }
        let video = VideoManifest {
            fps: VIDEO_FPS,
            view,
            total_seconds,
            coarse_calls: coarse.calls,
            fine_calls,
            frames: entries,
        };
        let path = self.path(VIDEO);
        write_json(&path, &video)?;
        out.push(path);
        Ok(out)
    }

    fn mimic(&self) -> Result<Vec<PathBuf>> {
        let motion = self.load_motion()?;
        let video: VideoManifest = read_json(&self.path(VIDEO))?;
        if video.view != self.config.main_view()? {
            return Err(Error::config(format!(
                "video was generated for the {} view but the camera is {}",
                video.view, self.config.camera.view
            )));
        }
        let (model, provider, _) = estimator_checkpoint::load(&self.path(ESTIMATOR), 3)?;
        let step = ticks_per_frame(motion.fps)?;
        let video_step = TICKS_PER_SECOND / VIDEO_FPS as usize;
        let k0 = span_start(&motion)?;
        let tick0 = k0 * step;
        let local = |tick: usize| -> Result<usize> {
            if tick < tick0 || (tick - tick0) % video_step != 0 {
                return Err(Error::config(format!("tick {tick} is off the {VIDEO_FPS} fps grid of the span")));
            }
            Ok((tick - tick0) / video_step)
        };
        let keyframes = motion
            .keyframe_indices
            .iter()
            .filter(|&&k| k >= k0)
            .map(|&k| Ok((local(k * step)?, motion.poses[k].clone())))
            .collect::<Result<Vec<_>>>()?;
        let mut frames = BTreeMap::new();
        for f in video.frames.iter().filter(|f| f.tick >= tick0) {
            frames.insert(local(f.tick)?, self.load_checked(&f.file, &f.sha256)?);
        }
        let input = MimicInput {
            skeleton: motion.skeleton.clone(),
            fps: VIDEO_FPS,
            keyframes,
            frames,
        };
        let estimator = SceneEstimator {
            model: &model,
            provider: &provider,
        };
        let camera = self.config.main_camera()?;
        let outcome = mimic_sequence(&input, &estimator, &camera, &self.config.render, &self.config.mimic)?;
        let m15 = self.path(MOTION_15);
        save_motion(&outcome.motion, &m15)?;
        let m30 = self.path(MOTION_30);
        save_motion(&upsample_motion(&outcome.motion, motion.fps)?, &m30)?;
        let csv = self.path(LOSS_CSV);
        fs::write(&csv, outcome.loss_csv()).map_err(|e| Error::io(&csv, e))?;
        let report = MimicReport {
            first_keyframe: k0,
            rounds: outcome.rounds,
            repetitions: outcome.repetitions,
            diverged_frames: outcome.records.iter().filter(|r| r.diverged).map(|r| r.frame).collect(),
        };
        let report_path = self.path(MIMIC_REPORT);
        write_json(&report_path, &report)?;
        Ok(vec![m15, m30, csv, report_path])
    }

    fn evaluate(&self) -> Result<Vec<PathBuf>> {
        let motion = self.load_motion()?;
        let pred = load_motion(self.path(MOTION_30))?;
        let k0 = span_start(&motion)?;
        if pred.fps != motion.fps || k0 + pred.len() != motion.len() {
            return Err(Error::contract(format!(
                "mimicked motion has {} frames at {} fps; the span from frame {k0} has {} at {} fps",
                pred.len(),
                pred.fps,
                motion.len() - k0,
                motion.fps
            )));
        }
        let gt = motion.slice(k0..motion.len())?;
        let filter = HierarchyFilter::new(self.config.evaluate.hierarchy_threshold)?;
        let report = MetricRegistry::new().evaluate_all(
            &pred,
            &gt,
            &[self.config.main_camera()?],
            &self.config.render,
            filter,
        )?;
        let json_path = self.path(METRICS_JSON);
        write_json(&json_path, &report)?;
        let csv = self.path(METRICS_CSV);
        fs::write(&csv, report.to_csv("mimic")).map_err(|e| Error::io(&csv, e))?;
        Ok(vec![json_path, csv])
    }

    pub fn metrics(&self) -> Result<MetricReport> {
        read_json(&self.path(METRICS_JSON))
    }
}

/// `name=limit` pairs for `evaluate --threshold`.
pub fn parse_threshold(text: &str) -> Result<(String, f64)> {
    let (name, limit) = text
        .split_once('=')
        .ok_or_else(|| Error::config(format!("threshold '{text}' is not metric=limit")))?;
    let limit: f64 = limit
        .parse()
        .map_err(|_| Error::config(format!("threshold limit '{limit}' is not a number")))?;
    Ok((name.trim().to_string(), limit))
}

/// Metrics that exceed their limit or are missing, as messages.
pub fn threshold_failures(report: &MetricReport, thresholds: &[(String, f64)]) -> Vec<String> {
    thresholds
        .iter()
        .filter_map(|(name, limit)| match report.get(name) {
            Some(v) if v <= *limit => None,
            Some(v) => Some(format!("{name} = {v:.6} exceeds {limit}")),
            None => Some(format!("{name} is not available")),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
        }
        assert!("render".parse::<Stage>().is_err());
    }

    #[test]
    fn thresholds() {
        assert_eq!(parse_threshold("l2p=0.02").unwrap(), ("l2p".to_string(), 0.02));
        assert!(parse_threshold("l2p").is_err());
        assert!(parse_threshold("l2p=x").is_err());
        let mut report = MetricReport {
            metrics: Default::default(),
            frames: (0, 1),
            hl2q_joints: vec![],
        };
        report
            .metrics
            .insert("l2p".into(), anymole_core::metrics::MetricValue::Ok { value: 0.03 });
        assert!(threshold_failures(&report, &[("l2p".into(), 0.05)]).is_empty());
        assert_eq!(threshold_failures(&report, &[("l2p".into(), 0.02)]).len(), 1);
        assert_eq!(threshold_failures(&report, &[("npss".into(), 1.0)]).len(), 1);
    }

    #[test]
    fn span_starts_at_the_first_keyframe_after_context() {
        let m = anymole_core::scene::toy_scene().motion;
        assert_eq!(span_start(&m).unwrap(), 60);
    }
}
