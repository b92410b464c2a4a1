//! Run configuration: one JSON document with a section per stage.
//!
//! `--set a.b=value` overrides are applied to the raw document before it is
//! typed, so an override can supply a field the file omits. Every seed a
//! randomized stage consumes must be written out explicitly.

use std::fs;
use std::path::{Path, PathBuf};

use anymole_core::{CameraConfig, CameraParams, Error, RenderStyle, Result, View};
use anymole_diffusion::adapt::DEFAULT_TEXT;
use anymole_diffusion::{AdaptConfig, ToyConfig};
use anymole_estimator::{EstimatorConfig, SyntheticConfig, TrainConfig};
use anymole_mimic::MimicConfig;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Environment variable naming the output root; wins over the config file.
pub const OUTPUT_ENV: &str = "ANYMOLE_OUTPUT";

/// Seeds that must appear in the document itself, not via defaults.
pub const SEED_PATHS: [&str; 6] = [
    "backend.seed",
    "adapt.seed",
    "estimator.model.seed",
    "estimator.features.seed",
    "estimator.train.seed",
    "generate.seed",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    /// Motion JSON with context length and keyframes; relative paths
    /// resolve against the config file's directory.
    pub motion: PathBuf,
    /// Point the named cameras look at.
    pub center: [f64; 3],
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            motion: PathBuf::from("motion.json"),
            center: [0.0; 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub views: Vec<View>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            views: View::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSection {
    pub model: EstimatorConfig,
    pub features: SyntheticConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub text: String,
    pub seed: u64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            text: DEFAULT_TEXT.to_string(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    /// Depth-ratio threshold for hl2q.
    pub hierarchy_threshold: f64,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig {
            hierarchy_threshold: 0.5,
        }
    }
}

/// Switches for the ablation runs; all on by default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    pub icadapt: bool,
    pub fine_stage: bool,
    pub keyframe_weighting: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation {
            icadapt: true,
            fine_stage: true,
            keyframe_weighting: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scene: SceneConfig,
    pub camera: CameraConfig,
    pub render: RenderStyle,
    pub synth: SynthConfig,
    pub backend: ToyConfig,
    pub adapt: AdaptConfig,
    pub estimator: EstimatorSection,
    pub generate: GenerateConfig,
    pub mimic: MimicConfig,
    pub evaluate: EvaluateConfig,
    pub ablation: Ablation,
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    /// Settings for the bundled toy scene: 64x64 frames at 16 px per unit.
    ///
    /// The mimic image and rotation weights are rescaled for that
    /// resolution; everything else keeps its module default.
    fn default() -> Self {
        RunConfig {
            scene: SceneConfig::default(),
            camera: CameraConfig {
                view: View::Front.name().to_string(),
                distance: 5.0,
                scale: 16.0,
                image: [64, 64],
                depth_range: [-6.5, -3.5],
            },
            render: RenderStyle::default(),
            synth: SynthConfig::default(),
            backend: ToyConfig::default(),
            adapt: AdaptConfig::default(),
            estimator: EstimatorSection::default(),
            generate: GenerateConfig::default(),
            mimic: MimicConfig {
                lambda_img: 2000.0,
                lambda_rot: 1000.0,
                ..MimicConfig::default()
            },
            evaluate: EvaluateConfig::default(),
            ablation: Ablation::default(),
            output: None,
        }
    }
}

impl RunConfig {
    pub fn center(&self) -> Vector3<f64> {
        Vector3::from(self.scene.center)
    }

    /// The mimicking and generation camera.
    pub fn main_camera(&self) -> Result<CameraParams> {
        self.camera.build(&self.center())
    }

    pub fn view_camera(&self, view: View) -> Result<CameraParams> {
        self.camera.build_view(view, &self.center())
    }

    pub fn main_view(&self) -> Result<View> {
        self.camera.view.parse()
    }

    pub fn validate(&self) -> Result<()> {
        self.main_camera()?;
        self.render.validate()?;
        self.backend.validate()?;
        self.adapt.validate()?;
        self.estimator.train.validate()?;
        self.mimic.validate()?;
        if self.synth.views.is_empty() {
            return Err(Error::config("synth.views is empty"));
        }
        if self.adapt.views == 0 || self.adapt.views > self.synth.views.len() {
            return Err(Error::config(format!(
                "adapt.views must be between 1 and the {} rendered views",
                self.synth.views.len()
            )));
        }
        if let Some(v) = self.estimator.train.views.iter().find(|v| !self.synth.views.contains(v)) {
            return Err(Error::config(format!("estimator view {v} is not rendered by synth-data")));
        }
        let image = [self.backend.image_width as u32, self.backend.image_height as u32];
        if image != self.camera.image || self.backend.image_channels != 3 {
            return Err(Error::config("backend must take the camera's image size with 3 channels"));
        }
        if !(self.evaluate.hierarchy_threshold > 0.0 && self.evaluate.hierarchy_threshold <= 1.0) {
            return Err(Error::config("evaluate.hierarchy_threshold must be in (0, 1]"));
        }
        Ok(())
    }

    /// Output root: the environment variable, then the config, then `./anymole-run`.
    pub fn output_root(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.output.clone().unwrap_or_else(|| PathBuf::from("anymole-run")),
        }
    }

    /// Keyframe weight after the ablation switch.
    pub fn effective_train(&self) -> TrainConfig {
        let mut t = self.estimator.train.clone();
        if !self.ablation.keyframe_weighting {
            t.keyframe_weight = 1;
        }
        t
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

fn parse_error(origin: &str, context: impl Into<String>) -> Error {
    Error::Parse {
        path: origin.to_string(),
        context: context.into(),
    }
}

/// Writes `value` at a dotted path, creating intermediate objects.
fn set_path(doc: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut node = doc;
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::config(format!("malformed override key '{path}'")));
    }
    for key in &keys[..keys.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::config(format!("override '{path}' descends into a non-object")))?;
        node = obj.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| Error::config(format!("override '{path}' descends into a non-object")))?;
    obj.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

fn get_path<'a>(doc: &'a Value, path: &str) -> Option<&'a Value> {
    path.split('.').try_fold(doc, |node, key| node.get(key))
}

/// Splits `key=value`; the value is JSON when it parses as JSON, else a string.
pub fn parse_override(text: &str) -> Result<(String, Value)> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override '{text}' is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.trim().to_string(), value))
}

/// Types a raw document after overrides, rejecting missing seeds and
/// override keys the configuration does not have.
pub fn from_value(mut doc: Value, overrides: &[String], origin: &str, base_dir: &Path) -> Result<RunConfig> {
    if !doc.is_object() {
        return Err(parse_error(origin, "config must be a JSON object"));
    }
    let mut keys = Vec::new();
    for o in overrides {
        let (key, value) = parse_override(o)?;
        set_path(&mut doc, &key, value)?;
        keys.push(key);
    }
    for path in SEED_PATHS {
        match get_path(&doc, path) {
            Some(v) if v.is_u64() => {}
            Some(_) => return Err(Error::config(format!("seed '{path}' must be a non-negative integer"))),
            None => {
                return Err(Error::config(format!(
                    "missing seed '{path}': every randomized stage needs an explicit seed"
                )))
            }
        }
    }
    let mut config: RunConfig = serde_json::from_value(doc).map_err(|e| parse_error(origin, e.to_string()))?;
    let typed = serde_json::to_value(&config).expect("config serializes");
    for key in keys {
        if get_path(&typed, &key).is_none() && key != "output" {
            return Err(Error::config(format!("unknown config key '{key}'")));
        }
    }
    if config.scene.motion.is_relative() {
        config.scene.motion = base_dir.join(&config.scene.motion);
    }
    if let Some(out) = &config.output {
        if out.is_relative() {
            config.output = Some(base_dir.join(out));
        }
    }
    config.validate()?;
    Ok(config)
}

/// Loads a config file, or the config snapshot inside a run manifest.
pub fn load(path: &Path, overrides: &[String]) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let origin = path.display().to_string();
    let mut doc: Value = serde_json::from_str(&text).map_err(|e| parse_error(&origin, e.to_string()))?;
    if doc.get("format").and_then(Value::as_str) == Some(crate::manifest::MANIFEST_FORMAT) {
        doc = doc
            .get_mut("config")
            .map(Value::take)
            .ok_or_else(|| parse_error(&origin, "manifest has no config snapshot"))?;
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    from_value(doc, overrides, &origin, &base)
}
