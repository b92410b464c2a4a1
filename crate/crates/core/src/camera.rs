//! Weak-perspective cameras and the screen-space joint convention.
//!
//! A world point `p` maps to camera space as `q = R p + t`. Screen
//! coordinates are `x = s q_x + W/2`, `y = -s q_y + H/2` (y grows
//! downward), and the camera-space `q_z` is normalized into `[-1, 1]`
//! over the configured depth range before being denormalized by `H/2`.
//! Camera-space `z` points toward the viewer, so larger depth is closer.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quat::Quat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Front,
    Left,
    Right,
    Back,
}

impl View {
    pub const ALL: [View; 4] = [View::Front, View::Left, View::Right, View::Back];

    pub fn name(self) -> &'static str {
        match self {
            View::Front => "front",
            View::Left => "left",
            View::Right => "right",
            View::Back => "back",
        }
    }

    /// Azimuth of the camera around the vertical axis, measured from +z.
    fn azimuth(self) -> f64 {
        use std::f64::consts::{FRAC_PI_2, PI};
        match self {
            View::Front => 0.0,
            View::Right => FRAC_PI_2,
            View::Back => PI,
            View::Left => -FRAC_PI_2,
        }
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for View {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "front" => Ok(View::Front),
            "left" => Ok(View::Left),
            "right" => Ok(View::Right),
            "back" => Ok(View::Back),
            other => Err(Error::config(format!(
                "unknown view '{other}' (expected front, left, right or back)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraParams {
    /// World-to-camera rotation.
    pub rotation: Quat,
    pub translation: Vector3<f64>,
    pub image_width: u32,
    pub image_height: u32,
    /// Pixels per scene unit.
    pub scale: f64,
    /// Camera-space `z` interval mapped onto NDC `[-1, 1]`.
    pub depth_range: (f64, f64),
}

/// Screen-space joint: pixel coordinates and denormalized depth.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ScreenJoint {
    pub x: f64,
    pub y: f64,
    pub depth: f64,
}

impl ScreenJoint {
    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.depth]
    }
}

/// Projection of a point list, with the number of depth clamps applied.
#[derive(Debug, Clone, PartialEq)]
pub struct Projected {
    pub joints: Vec<ScreenJoint>,
    pub clamped: usize,
}

impl CameraParams {
    pub fn validate(&self) -> Result<()> {
        if self.image_width == 0 || self.image_height == 0 {
            return Err(Error::config("camera image dimensions must be positive"));
        }
        if !(self.scale > 0.0) {
            return Err(Error::config("camera scale must be positive"));
        }
        if !(self.depth_range.0 < self.depth_range.1) {
            return Err(Error::config("camera depth range must satisfy near < far"));
        }
        if !self.rotation.is_unit() {
            return Err(Error::config("camera rotation must be a unit quaternion"));
        }
        Ok(())
    }

    /// Factor applied to NDC depth to express it in pixels.
    pub fn depth_denorm(&self) -> f64 {
        self.image_height as f64 / 2.0
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(p) + self.translation
    }

    pub fn ndc_depth(&self, q_z: f64) -> (f64, bool) {
        let (near, far) = self.depth_range;
        let ndc = 2.0 * (q_z - near) / (far - near) - 1.0;
        if ndc < -1.0 {
            (-1.0, true)
        } else if ndc > 1.0 {
            (1.0, true)
        } else {
            (ndc, false)
        }
    }

    pub fn project_point(&self, p: &Vector3<f64>) -> (ScreenJoint, bool) {
        let q = self.to_camera(p);
        let (ndc, clamped) = self.ndc_depth(q.z);
        let joint = ScreenJoint {
            x: self.scale * q.x + self.image_width as f64 / 2.0,
            y: -self.scale * q.y + self.image_height as f64 / 2.0,
            depth: ndc * self.depth_denorm(),
        };
        (joint, clamped)
    }

    /// Jacobian of `(x, y, depth)` with respect to the world point, valid
    /// wherever the depth is not clamped.
    pub fn jacobian(&self) -> Matrix3<f64> {
        let (near, far) = self.depth_range;
        let dz = 2.0 / (far - near) * self.depth_denorm();
        Matrix3::from_diagonal(&Vector3::new(self.scale, -self.scale, dz)) * self.rotation.to_matrix()
    }
}

/// Projects global points to screen space, in order.
pub fn project(points: &[Vector3<f64>], cam: &CameraParams) -> Projected {
    let mut clamped = 0;
    let joints = points
        .iter()
        .map(|p| {
            let (j, c) = cam.project_point(p);
            clamped += c as usize;
            j
        })
        .collect();
    if clamped > 0 {
        log::warn!("{clamped} projected point(s) clamped to the depth range");
    }
    Projected { joints, clamped }
}

/// Camera on one of the four horizontal axes around `center`, looking at it.
///
/// The depth range spans `radius` scene units on either side of the center.
pub fn named_view(
    view: View,
    center: &Vector3<f64>,
    distance: f64,
    image: (u32, u32),
    scale: f64,
    radius: f64,
) -> Result<CameraParams> {
    if !(distance > 0.0) || !(radius > 0.0) {
        return Err(Error::config("camera distance and scene radius must be positive"));
    }
    let rotation = Quat::from_axis_angle(&Vector3::y(), -view.azimuth());
    let translation = -rotation.rotate(center) - Vector3::new(0.0, 0.0, distance);
    let cam = CameraParams {
        rotation,
        translation,
        image_width: image.0,
        image_height: image.1,
        scale,
        depth_range: (-distance - radius, -distance + radius),
    };
    cam.validate()?;
    Ok(cam)
}

/// Camera block of a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraConfig {
    pub view: String,
    pub distance: f64,
    pub scale: f64,
    pub image: [u32; 2],
    /// Camera-space `[near, far]`.
    pub depth_range: [f64; 2],
}

impl CameraConfig {
    pub fn build(&self, center: &Vector3<f64>) -> Result<CameraParams> {
        self.build_view(self.view.parse()?, center)
    }

    /// Same intrinsics, different named view.
    pub fn build_view(&self, view: View, center: &Vector3<f64>) -> Result<CameraParams> {
        let radius = 0.5 * (self.depth_range[1] - self.depth_range[0]);
        let mut cam = named_view(
            view,
            center,
            self.distance,
            (self.image[0], self.image[1]),
            self.scale,
            radius,
        )?;
        cam.depth_range = (self.depth_range[0], self.depth_range[1]);
        cam.validate()?;
        Ok(cam)
    }
}
