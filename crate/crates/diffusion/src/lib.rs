//! Video diffusion side of the pipeline: the backend interface, context
//! adaptation of spatial parameters, a small deterministic toy backend, and
//! two-stage latent-inpainting generation.

pub mod adapt;
pub mod backend;
pub mod checkpoint;
pub mod guidance;
pub mod latent;
pub mod params;
pub mod schedule;
pub mod stages;
pub mod toy;

pub use adapt::{icadapt, icadapt_pooled, AdaptConfig, AdaptReport, PooledClip, VideoClip};
pub use backend::{AdaptableBackend, Conditioning, VideoBackend};
pub use guidance::{generate_segment, inpaint_replace, GuidanceSpec};
pub use latent::{LatentShape, LatentVideo, SEGMENT_FRAMES};
pub use params::{ModelParameters, Partition};
pub use schedule::Schedule;
pub use stages::{coarse_stage, fine_stage, plan_two_stage, StageInputs};
pub use toy::{ToyBackend, ToyConfig};
