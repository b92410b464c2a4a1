//! Pipeline driver: run configuration, the run manifest, and the stages
//! behind the `anymole` command.

pub mod config;
pub mod manifest;
pub mod stages;

use std::fs;
use std::path::{Path, PathBuf};

use anymole_core::io::save_motion;
use anymole_core::scene::toy_scene;
use anymole_core::{Error, Result};

pub use config::{RunConfig, OUTPUT_ENV};
pub use manifest::{RunManifest, StageRecord};
pub use stages::{Outcome, Run, Stage};

pub const CONFIG_FILE: &str = "config.json";
pub const MOTION_FILE: &str = "motion.json";

/// Writes the default config and the bundled toy motion into `dir`.
/// Returns the config path.
pub fn init_dir(dir: &Path, force: bool) -> Result<PathBuf> {
    let config_path = dir.join(CONFIG_FILE);
    let motion_path = dir.join(MOTION_FILE);
    for p in [&config_path, &motion_path] {
        if p.exists() && !force {
            return Err(Error::config(format!("{} exists; pass --force to overwrite", p.display())));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_motion(&toy_scene().motion, &motion_path)?;
    let config = RunConfig {
        scene: config::SceneConfig {
            motion: PathBuf::from(MOTION_FILE),
            center: toy_scene().center.into(),
        },
        output: Some(PathBuf::from("run")),
        ..RunConfig::default()
    };
    fs::write(&config_path, config.to_json()).map_err(|e| Error::io(&config_path, e))?;
    Ok(config_path)
}
