//! Core data model for keyframe motion in-betweening: skeletons, quaternion
//! poses, forward kinematics, cameras, a differentiable skeleton renderer,
//! evaluation metrics and training clip enumeration.

pub mod camera;
pub mod clips;
pub mod error;
pub mod image;
pub mod io;
pub mod metrics;
pub mod motion;
pub mod optim;
pub mod quat;
pub mod render;
pub mod scene;
pub mod skeleton;

pub use camera::{named_view, project, CameraConfig, CameraParams, ScreenJoint, View};
pub use error::{Error, Result};
pub use image::Image;
pub use motion::{fk, MotionSequence, Pose};
pub use quat::{slerp, Quat};
pub use render::{render, RenderStyle};
pub use skeleton::{Joint, Skeleton};
