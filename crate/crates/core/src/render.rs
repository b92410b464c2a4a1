//! Soft, differentiable skeleton renderer.
//!
//! Joints are Gaussian blobs, bones are soft capsules, and primitives are
//! composited by per-channel maximum over the background. A mild depth cue
//! scales each primitive's brightness by `1 + depth_cue * ndc / 2`, so depth
//! changes are visible in the image.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::camera::{project, CameraParams, ScreenJoint, View};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::motion::{fk, MotionSequence, Pose};
use crate::skeleton::Skeleton;

pub const DEFAULT_PALETTE: [[f64; 3]; 8] = [
    [0.8, 0.2, 0.2],
    [0.2, 0.8, 0.2],
    [0.2, 0.3, 0.8],
    [0.8, 0.8, 0.1],
    [0.7, 0.2, 0.8],
    [0.1, 0.8, 0.8],
    [0.8, 0.5, 0.1],
    [0.5, 0.5, 0.5],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderStyle {
    /// Gaussian sigma of joint blobs, pixels.
    pub joint_radius: f64,
    /// Full width of the solid capsule core, pixels.
    pub bone_thickness: f64,
    /// Falloff sigma of capsule edges, pixels. Must be positive.
    pub softness: f64,
    /// Per-joint colors, cycled when shorter than the skeleton.
    pub joint_colors: Vec<[f64; 3]>,
    /// Bone brightness relative to its parent joint color.
    pub bone_intensity: f64,
    pub background: f64,
    pub depth_cue: f64,
}

impl Default for RenderStyle {
    fn default() -> Self {
        RenderStyle {
            joint_radius: 2.0,
            bone_thickness: 2.0,
            softness: 0.75,
            joint_colors: DEFAULT_PALETTE.to_vec(),
            bone_intensity: 0.6,
            background: 0.0,
            depth_cue: 0.4,
        }
    }
}

impl RenderStyle {
    pub fn validate(&self) -> Result<()> {
        if !(self.softness > 0.0) || !(self.joint_radius > 0.0) {
            return Err(Error::config("render softness and joint radius must be positive"));
        }
        if !(self.bone_thickness >= 0.0) {
            return Err(Error::config("bone thickness must be non-negative"));
        }
        if self.joint_colors.is_empty() {
            return Err(Error::config("render style needs at least one joint color"));
        }
        if !(0.0..1.0).contains(&self.depth_cue) {
            return Err(Error::config("depth cue must be in [0, 1)"));
        }
        let peak = 1.0 + self.depth_cue / 2.0;
        let bad = self
            .joint_colors
            .iter()
            .flatten()
            .any(|c| !(0.0..=1.0).contains(&(c * peak)));
        if bad || !(0.0..=1.0).contains(&self.background) || !(0.0..=1.0).contains(&self.bone_intensity) {
            return Err(Error::config("render intensities must stay in [0, 1] after depth shading"));
        }
        Ok(())
    }

    pub fn color(&self, j: usize) -> [f64; 3] {
        self.joint_colors[j % self.joint_colors.len()]
    }
}

/// Output raster geometry, taken from a camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
}

impl From<&CameraParams> for Raster {
    fn from(c: &CameraParams) -> Self {
        Raster {
            width: c.image_width as usize,
            height: c.image_height as usize,
        }
    }
}

struct Primitive {
    color: [f64; 3],
    shade: f64,
    kind: Kind,
}

enum Kind {
    Blob { j: usize },
    Bone { a: usize, b: usize },
}

fn primitives(parents: &[Option<usize>], joints: &[ScreenJoint], style: &RenderStyle, raster: Raster) -> Vec<Primitive> {
    let half = raster.height as f64 / 2.0;
    let shade = |j: usize| 1.0 + style.depth_cue * (joints[j].depth / half).clamp(-1.0, 1.0) / 2.0;
    let mut out = Vec::with_capacity(2 * joints.len());
    for (j, parent) in parents.iter().enumerate() {
        out.push(Primitive {
            color: style.color(j),
            shade: shade(j),
            kind: Kind::Blob { j },
        });
        if let Some(p) = *parent {
            let c = style.color(p);
            out.push(Primitive {
                color: c.map(|v| v * style.bone_intensity),
                shade: 0.5 * (shade(p) + shade(j)),
                kind: Kind::Bone { a: p, b: j },
            });
        }
    }
    out
}

/// Closest point parameter on segment `a -> b`.
#[inline]
fn segment_param(px: f64, py: f64, a: &ScreenJoint, b: &ScreenJoint) -> f64 {
    let (ex, ey) = (b.x - a.x, b.y - a.y);
    let len2 = ex * ex + ey * ey;
    if len2 < 1e-18 {
        0.0
    } else {
        (((px - a.x) * ex + (py - a.y) * ey) / len2).clamp(0.0, 1.0)
    }
}

#[inline]
fn coverage(prim: &Primitive, px: f64, py: f64, joints: &[ScreenJoint], style: &RenderStyle) -> f64 {
    match prim.kind {
        Kind::Blob { j } => {
            let (dx, dy) = (px - joints[j].x, py - joints[j].y);
            (-(dx * dx + dy * dy) / (2.0 * style.joint_radius * style.joint_radius)).exp()
        }
        Kind::Bone { a, b } => {
            let (ja, jb) = (&joints[a], &joints[b]);
            let u = segment_param(px, py, ja, jb);
            let cx = ja.x + u * (jb.x - ja.x);
            let cy = ja.y + u * (jb.y - ja.y);
            let d = ((px - cx).powi(2) + (py - cy).powi(2)).sqrt();
            let e = (d - style.bone_thickness / 2.0).max(0.0);
            (-e * e / (2.0 * style.softness * style.softness)).exp()
        }
    }
}

fn parents_of(skeleton: &Skeleton) -> Vec<Option<usize>> {
    (0..skeleton.len()).map(|j| skeleton.parent(j)).collect()
}

/// Renders already-projected joints. Pixel `(i, j)` samples the point `(i + 0.5, j + 0.5)`.
pub fn render_screen(
    parents: &[Option<usize>],
    joints: &[ScreenJoint],
    style: &RenderStyle,
    raster: Raster,
) -> Image {
    let prims = primitives(parents, joints, style, raster);
    let mut img = Image::filled(raster.width, raster.height, 3, style.background);
    for y in 0..raster.height {
        let py = y as f64 + 0.5;
        for x in 0..raster.width {
            let px = x as f64 + 0.5;
            let base = img.index(x, y, 0);
            for prim in &prims {
                let v = coverage(prim, px, py, joints, style) * prim.shade;
                for c in 0..3 {
                    let val = prim.color[c] * v;
                    if val > img.data[base + c] {
                        img.data[base + c] = val;
                    }
                }
            }
        }
    }
    img
}

/// Gradient of `sum(d_image * image)` with respect to each joint's `(x, y, depth)`.
///
/// Max-composition routes each pixel channel's gradient to the winning
/// primitive; the background receives none.
pub fn render_screen_backward(
    parents: &[Option<usize>],
    joints: &[ScreenJoint],
    style: &RenderStyle,
    raster: Raster,
    d_image: &Image,
) -> Result<Vec<[f64; 3]>> {
    if d_image.width != raster.width || d_image.height != raster.height || d_image.channels != 3 {
        return Err(Error::contract("image gradient shape does not match the raster"));
    }
    let prims = primitives(parents, joints, style, raster);
    let half = raster.height as f64 / 2.0;
    // Shade is flat once the depth leaves the [-1, 1] NDC band.
    let dshade: Vec<f64> = joints
        .iter()
        .map(|j| if j.depth.abs() <= half { style.depth_cue / raster.height as f64 } else { 0.0 })
        .collect();
    let sig2 = style.joint_radius * style.joint_radius;
    let soft2 = style.softness * style.softness;
    let mut grad = vec![[0.0; 3]; joints.len()];
    let mut cov = vec![0.0; prims.len()];
    for y in 0..raster.height {
        let py = y as f64 + 0.5;
        for x in 0..raster.width {
            let px = x as f64 + 0.5;
            let base = d_image.index(x, y, 0);
            let g = &d_image.data[base..base + 3];
            if g.iter().all(|v| *v == 0.0) {
                continue;
            }
            for (k, prim) in prims.iter().enumerate() {
                cov[k] = coverage(prim, px, py, joints, style);
            }
            for c in 0..3 {
                if g[c] == 0.0 {
                    continue;
                }
                let mut best = style.background;
                let mut win = None;
                for (k, prim) in prims.iter().enumerate() {
                    let val = prim.color[c] * prim.shade * cov[k];
                    if val > best {
                        best = val;
                        win = Some(k);
                    }
                }
                let Some(k) = win else { continue };
                let prim = &prims[k];
                let v = cov[k];
                // d(color * shade * v) = color * (shade * dv + v * dshade)
                let amp = g[c] * prim.color[c];
                match prim.kind {
                    Kind::Blob { j } => {
                        let s = amp * prim.shade * v / sig2;
                        grad[j][0] += s * (px - joints[j].x);
                        grad[j][1] += s * (py - joints[j].y);
                        grad[j][2] += amp * v * dshade[j];
                    }
                    Kind::Bone { a, b } => {
                        let (ja, jb) = (&joints[a], &joints[b]);
                        let u = segment_param(px, py, ja, jb);
                        let cx = ja.x + u * (jb.x - ja.x);
                        let cy = ja.y + u * (jb.y - ja.y);
                        let (rx, ry) = (px - cx, py - cy);
                        let d = (rx * rx + ry * ry).sqrt();
                        let e = d - style.bone_thickness / 2.0;
                        if e > 0.0 && d > 1e-12 {
                            // dv/dd = -v e / s^2 ; dd/dA = -(1-u) r/d ; dd/dB = -u r/d
                            let s = amp * prim.shade * v * e / (soft2 * d);
                            grad[a][0] += s * (1.0 - u) * rx;
                            grad[a][1] += s * (1.0 - u) * ry;
                            grad[b][0] += s * u * rx;
                            grad[b][1] += s * u * ry;
                        }
                        grad[a][2] += amp * v * dshade[a] / 2.0;
                        grad[b][2] += amp * v * dshade[b] / 2.0;
                    }
                }
            }
        }
    }
    Ok(grad)
}

/// Renders one pose through a camera.
pub fn render(skeleton: &Skeleton, pose: &Pose, cam: &CameraParams, style: &RenderStyle) -> Result<Image> {
    let positions = fk(skeleton, pose)?;
    let projected = project(&positions, cam);
    Ok(render_screen(&parents_of(skeleton), &projected.joints, style, cam.into()))
}

pub fn render_motion(motion: &MotionSequence, cam: &CameraParams, style: &RenderStyle) -> Result<Vec<Image>> {
    motion
        .poses
        .iter()
        .map(|p| render(&motion.skeleton, p, cam, style))
        .collect()
}

/// File name of a rendered frame inside its view directory.
pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:04}.png")
}

pub fn frame_path(root: &Path, view: View, index: usize) -> PathBuf {
    root.join(view.name()).join(frame_file_name(index))
}

#[derive(Debug, Default)]
pub struct RenderedViews {
    pub written: Vec<(View, usize, PathBuf)>,
    pub failures: Vec<(View, usize, String)>,
}

/// Writes one PNG sequence per view under `out_dir/<view>/`.
pub fn render_views(
    motion: &MotionSequence,
    cams: &[(View, CameraParams)],
    style: &RenderStyle,
    out_dir: &Path,
) -> Result<RenderedViews> {
    style.validate()?;
    let mut report = RenderedViews::default();
    for (view, cam) in cams {
        for (i, pose) in motion.poses.iter().enumerate() {
            let path = frame_path(out_dir, *view, i);
            match render(&motion.skeleton, pose, cam, style).and_then(|img| img.save_png(&path)) {
                Ok(()) => report.written.push((*view, i, path)),
                Err(e) => {
                    log::error!("frame {i} of view {view}: {e}");
                    report.failures.push((*view, i, e.to_string()));
                }
            }
        }
    }
    Ok(report)
}
