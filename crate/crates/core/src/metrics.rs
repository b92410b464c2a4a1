//! Motion and image similarity metrics, plus a registry for external image metrics.

use std::collections::BTreeMap;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::camera::CameraParams;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::motion::MotionSequence;
use crate::render::{render_motion, RenderStyle};

pub const BUILTIN_METRICS: [&str; 5] = ["l2q", "hl2q", "l2p", "npss", "ssim"];
pub const DEFAULT_HL2Q_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HierarchyFilter {
    pub threshold: f64,
}

impl HierarchyFilter {
    pub fn new(threshold: f64) -> Result<Self> {
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(Error::config(format!("hierarchy threshold {threshold} outside (0, 1]")));
        }
        Ok(HierarchyFilter { threshold })
    }

    /// Joints with hierarchy depth at most `floor(threshold * max_depth)`.
    pub fn select(&self, depths: &[usize]) -> Vec<usize> {
        let max = depths.iter().copied().max().unwrap_or(0);
        let limit = (self.threshold * max as f64).floor() as usize;
        (0..depths.len()).filter(|&j| depths[j] <= limit).collect()
    }
}

fn check_pair(pred: &MotionSequence, gt: &MotionSequence) -> Result<()> {
    if !pred.skeleton.same_structure(&gt.skeleton) {
        return Err(Error::contract("pred and gt skeletons differ"));
    }
    if pred.len() != gt.len() {
        return Err(Error::contract(format!(
            "pred has {} frames, gt has {}",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::contract("cannot evaluate empty motions"));
    }
    Ok(())
}

fn quat_sq_error(pred: &MotionSequence, gt: &MotionSequence, joints: &[usize]) -> f64 {
    let mut sum = 0.0;
    for (p, g) in pred.poses.iter().zip(&gt.poses) {
        for &j in joints {
            let a = p.rotations[j].canonical().to_array();
            let b = g.rotations[j].canonical().to_array();
            sum += a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        }
    }
    sum / (pred.len() * joints.len()) as f64
}

/// Mean squared distance between canonical local quaternions.
pub fn l2q(pred: &MotionSequence, gt: &MotionSequence) -> Result<f64> {
    hl2q(pred, gt, HierarchyFilter { threshold: 1.0 })
}

/// L2Q restricted to joints near the root of the hierarchy.
pub fn hl2q(pred: &MotionSequence, gt: &MotionSequence, filter: HierarchyFilter) -> Result<f64> {
    check_pair(pred, gt)?;
    let joints = filter.select(&gt.skeleton.depths());
    Ok(quat_sq_error(pred, gt, &joints))
}

/// Mean squared global joint position error divided by the squared character height.
pub fn l2p(pred: &MotionSequence, gt: &MotionSequence) -> Result<f64> {
    check_pair(pred, gt)?;
    let pp = pred.global_positions()?;
    let gp = gt.global_positions()?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (a, b) in pp.iter().zip(&gp) {
        for (x, y) in a.iter().zip(b) {
            sum += (x - y).norm_squared();
            n += 1;
        }
    }
    let h = gt.skeleton.height();
    Ok(sum / n as f64 / (h * h))
}

/// Relative floor below which a channel's non-DC power counts as zero.
pub const NPSS_POWER_FLOOR: f64 = 1e-18;

/// Power spectrum without the DC bin, so constant channels carry no power.
/// Rounding leakage under `NPSS_POWER_FLOOR` times the channel energy is zeroed.
fn power_spectrum(series: &[f64], planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let n = series.len();
    let mut buf: Vec<Complex<f64>> = series.iter().map(|&v| Complex::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    let power: Vec<f64> = buf[1..].iter().map(|c| c.norm_sqr()).collect();
    // Parseval: the full spectrum sums to n * sum(x^2).
    let energy = n as f64 * series.iter().map(|v| v * v).sum::<f64>();
    if power.iter().sum::<f64>() <= NPSS_POWER_FLOOR * energy {
        vec![0.0; power.len()]
    } else {
        power
    }
}

/// Earth mover's distance between two spectra viewed as distributions.
///
/// A zero-power spectrum is treated as uniform.
pub fn spectral_emd(p: &[f64], g: &[f64]) -> f64 {
    let normalize = |s: &[f64]| -> Vec<f64> {
        let total: f64 = s.iter().sum();
        if total > 0.0 {
            s.iter().map(|v| v / total).collect()
        } else {
            vec![1.0 / s.len() as f64; s.len()]
        }
    };
    let (p, g) = (normalize(p), normalize(g));
    let (mut cp, mut cg, mut emd) = (0.0, 0.0, 0.0);
    for (a, b) in p.iter().zip(&g) {
        cp += a;
        cg += b;
        emd += (cp - cg).abs();
    }
    emd
}

/// Normalized power spectrum similarity over quaternion component channels,
/// weighted by ground-truth channel power.
pub fn npss(pred: &MotionSequence, gt: &MotionSequence) -> Result<f64> {
    check_pair(pred, gt)?;
    if gt.len() < 2 {
        return Err(Error::contract("npss needs at least 2 frames"));
    }
    let channels = |m: &MotionSequence| -> Vec<Vec<f64>> {
        let nj = m.skeleton.len();
        (0..nj * 4)
            .map(|c| {
                m.poses
                    .iter()
                    .map(|p| p.rotations[c / 4].canonical().to_array()[c % 4])
                    .collect()
            })
            .collect()
    };
    let mut planner = FftPlanner::new();
    let (mut num, mut den) = (0.0, 0.0);
    for (a, b) in channels(pred).iter().zip(channels(gt).iter()) {
        let pa = power_spectrum(a, &mut planner);
        let pb = power_spectrum(b, &mut planner);
        let weight: f64 = pb.iter().sum();
        if weight > 0.0 {
            num += weight * spectral_emd(&pa, &pb);
            den += weight;
        }
    }
    Ok(if den > 0.0 { num / den } else { 0.0 })
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let w1: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = w1.iter().sum();
    let w1: Vec<f64> = w1.iter().map(|v| v / s).collect();
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for a in &w1 {
        for b in &w1 {
            w.push(a * b);
        }
    }
    w
}

/// Mean SSIM over all fully contained 11x11 Gaussian windows, dynamic range 1.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::contract(format!(
            "ssim on {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::contract("ssim needs images at least 11x11"));
    }
    let (a, b) = (a.luminance(), b.luminance());
    let c1 = 0.01f64.powi(2);
    let c2 = 0.03f64.powi(2);
    let win = gaussian_window();
    let (nx, ny) = (a.width - SSIM_WINDOW + 1, a.height - SSIM_WINDOW + 1);
    let mut total = 0.0;
    for oy in 0..ny {
        for ox in 0..nx {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for wy in 0..SSIM_WINDOW {
                for wx in 0..SSIM_WINDOW {
                    let w = win[wy * SSIM_WINDOW + wx];
                    let va = a.get(ox + wx, oy + wy, 0);
                    let vb = b.get(ox + wx, oy + wy, 0);
                    ma += w * va;
                    mb += w * vb;
                    saa += w * va * va;
                    sbb += w * vb * vb;
                    sab += w * va * vb;
                }
            }
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    Ok(total / (nx * ny) as f64)
}

/// External image metric over paired rendered frames. `Ok(None)` means the
/// metric could not be computed and is reported as absent.
pub type PerceptualMetric =
    Arc<dyn Fn(&[Image], &[Image]) -> std::result::Result<Option<f64>, String> + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum MetricValue {
    Ok { value: f64 },
    Absent,
    Invalid { reason: String },
    Failed { reason: String },
}

impl MetricValue {
    fn from_scalar(v: f64) -> Self {
        if v.is_finite() {
            MetricValue::Ok { value: v }
        } else {
            MetricValue::Invalid {
                reason: format!("non-finite value {v}"),
            }
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            MetricValue::Ok { value } => Some(*value),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metrics: BTreeMap<String, MetricValue>,
    /// Half-open frame range that was evaluated.
    pub frames: (usize, usize),
    /// Joints used by hl2q.
    pub hl2q_joints: Vec<usize>,
}

impl MetricReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).and_then(MetricValue::value)
    }

    /// CSV rows `motion,metric,status,value`.
    pub fn to_csv(&self, motion: &str) -> String {
        let mut out = String::from("motion,metric,status,value\n");
        for (name, v) in &self.metrics {
            let (status, value) = match v {
                MetricValue::Ok { value } => ("ok", value.to_string()),
                MetricValue::Absent => ("absent", String::new()),
                MetricValue::Invalid { .. } => ("invalid", String::new()),
                MetricValue::Failed { .. } => ("failed", String::new()),
            };
            out.push_str(&format!("{motion},{name},{status},{value}\n"));
        }
        out
    }
}

#[derive(Clone, Default)]
pub struct MetricRegistry {
    plugins: Vec<(String, PerceptualMetric)>,
}

impl MetricRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, metric: PerceptualMetric) -> Result<()> {
        if BUILTIN_METRICS.contains(&name) || self.plugins.iter().any(|(n, _)| n == name) {
            return Err(Error::config(format!("metric {name:?} is already registered")));
        }
        self.plugins.push((name.to_string(), metric));
        Ok(())
    }

    pub fn names(&self) -> Vec<&str> {
        self.plugins.iter().map(|(n, _)| n.as_str()).collect()
    }

    /// Computes the built-in metrics and every registered plug-in.
    ///
    /// Image metrics compare renders of both motions through each camera.
    pub fn evaluate_all(
        &self,
        pred: &MotionSequence,
        gt: &MotionSequence,
        cams: &[CameraParams],
        style: &RenderStyle,
        filter: HierarchyFilter,
    ) -> Result<MetricReport> {
        check_pair(pred, gt)?;
        let mut metrics = BTreeMap::new();
        let record = |r: Result<f64>| match r {
            Ok(v) => MetricValue::from_scalar(v),
            Err(e) => MetricValue::Failed { reason: e.to_string() },
        };
        metrics.insert("l2q".into(), record(l2q(pred, gt)));
        metrics.insert("hl2q".into(), record(hl2q(pred, gt, filter)));
        metrics.insert("l2p".into(), record(l2p(pred, gt)));
        metrics.insert("npss".into(), record(npss(pred, gt)));

        let mut pred_frames = Vec::new();
        let mut gt_frames = Vec::new();
        for cam in cams {
            pred_frames.extend(render_motion(pred, cam, style)?);
            gt_frames.extend(render_motion(gt, cam, style)?);
        }
        let ssim_value = if pred_frames.is_empty() {
            MetricValue::Absent
        } else {
            let mut acc = Ok(0.0);
            for (a, b) in pred_frames.iter().zip(&gt_frames) {
                acc = acc.and_then(|s| ssim(a, b).map(|v| s + v));
            }
            record(acc.map(|s| s / pred_frames.len() as f64))
        };
        metrics.insert("ssim".into(), ssim_value);

        for (name, f) in &self.plugins {
            let value = match f(&pred_frames, &gt_frames) {
                Ok(Some(v)) => MetricValue::from_scalar(v),
                Ok(None) => MetricValue::Absent,
                Err(e) => {
                    log::warn!("metric {name} failed: {e}");
                    MetricValue::Failed { reason: e }
                }
            };
            metrics.insert(name.clone(), value);
        }
        Ok(MetricReport {
            metrics,
            frames: (0, gt.len()),
            hl2q_joints: filter.select(&gt.skeleton.depths()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::Pose;
    use crate::quat::Quat;
    use crate::skeleton::Skeleton;
    use nalgebra::Vector3;

    fn chain5() -> Skeleton {
        Skeleton::chain(&[Vector3::zeros(), Vector3::y(), Vector3::y(), Vector3::y(), Vector3::y()]).unwrap()
    }

    fn seq(skel: &Skeleton, poses: Vec<Pose>) -> MotionSequence {
        MotionSequence::new(skel.clone(), 30, poses, vec![], 0).unwrap()
    }

    #[test]
    fn l2q_quarter_turn() {
        let skel = Skeleton::chain(&[Vector3::zeros()]).unwrap();
        let a = seq(&skel, vec![Pose::identity(1)]);
        let mut p = Pose::identity(1);
        p.rotations[0] = Quat::from_axis_angle(&Vector3::z(), std::f64::consts::FRAC_PI_2);
        let b = seq(&skel, vec![p]);
        // |(1,0,0,0) - (c,0,0,c)|^2 with c = cos(pi/4) expands to 2 - sqrt(2).
        let c = std::f64::consts::FRAC_PI_4.cos();
        let expected = (1.0 - c).powi(2) + c * c;
        assert!((l2q(&a, &b).unwrap() - expected).abs() < 1e-12);
        assert!((expected - (2.0 - 2f64.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn double_cover_is_free() {
        let skel = Skeleton::chain(&[Vector3::zeros()]).unwrap();
        let q = Quat::from_axis_angle(&Vector3::x(), 0.7);
        let neg = Quat { w: -q.w, x: -q.x, y: -q.y, z: -q.z };
        let a = seq(&skel, vec![Pose { root: Vector3::zeros(), rotations: vec![q] }]);
        let b = seq(&skel, vec![Pose { root: Vector3::zeros(), rotations: vec![neg] }]);
        assert_eq!(l2q(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn half_threshold_on_chain() {
        let f = HierarchyFilter::new(0.5).unwrap();
        assert_eq!(f.select(&[0, 1, 2, 3, 4]), vec![0, 1, 2]);
        assert!(HierarchyFilter::new(0.0).is_err());
    }

    #[test]
    fn leaf_error_invisible_to_hl2q() {
        let skel = chain5();
        let a = seq(&skel, vec![Pose::identity(5)]);
        let mut p = Pose::identity(5);
        p.rotations[4] = Quat::from_axis_angle(&Vector3::z(), 1.0);
        let b = seq(&skel, vec![p]);
        assert_eq!(hl2q(&a, &b, HierarchyFilter::new(0.5).unwrap()).unwrap(), 0.0);
        assert!(l2q(&a, &b).unwrap() > 0.0);
    }

    #[test]
    fn uniform_root_offset() {
        let skel = chain5();
        let a = seq(&skel, vec![Pose::identity(5); 3]);
        let mut shifted = a.clone();
        for p in &mut shifted.poses {
            p.root.x += 0.3;
        }
        let h = skel.height();
        assert!((l2p(&shifted, &a).unwrap() - (0.3 / h).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn skeleton_mismatch_is_contract_error() {
        let a = seq(&chain5(), vec![Pose::identity(5)]);
        let skel = Skeleton::chain(&[Vector3::zeros()]).unwrap();
        let b = seq(&skel, vec![Pose::identity(1)]);
        assert!(matches!(l2q(&a, &b), Err(Error::Contract(_))));
    }

    #[test]
    fn ssim_identity_and_inverse() {
        let mut img = Image::filled(16, 16, 1, 0.0);
        for y in 0..16 {
            for x in 0..16 {
                img.set(x, y, 0, ((x + y) % 2) as f64);
            }
        }
        assert!((ssim(&img, &img).unwrap() - 1.0).abs() < 1e-12);
        let mut inv = img.clone();
        inv.data.iter_mut().for_each(|v| *v = 1.0 - *v);
        assert!(ssim(&img, &inv).unwrap() < 0.0);
        let flat = Image::filled(12, 12, 1, 0.3);
        assert!((ssim(&flat, &flat).unwrap() - 1.0).abs() < 1e-12);
        assert!(ssim(&flat, &img).is_err());
    }

    #[test]
    fn registry_rules() {
        let skel = chain5();
        let a = seq(&skel, vec![Pose::identity(5); 2]);
        let style = RenderStyle::default();
        let mut reg = MetricRegistry::new();
        let report = reg
            .evaluate_all(&a, &a, &[], &style, HierarchyFilter::new(0.5).unwrap())
            .unwrap();
        let names: Vec<_> = report.metrics.keys().cloned().collect();
        assert_eq!(names, vec!["hl2q", "l2p", "l2q", "npss", "ssim"]);

        reg.register("nan", Arc::new(|_, _| Ok(Some(f64::NAN)))).unwrap();
        reg.register("boom", Arc::new(|_, _| Err("exploded".into()))).unwrap();
        reg.register("missing", Arc::new(|_, _| Ok(None))).unwrap();
        assert!(reg.register("nan", Arc::new(|_, _| Ok(None))).is_err());
        assert!(reg.register("l2q", Arc::new(|_, _| Ok(None))).is_err());
        let report = reg
            .evaluate_all(&a, &a, &[], &style, HierarchyFilter::new(0.5).unwrap())
            .unwrap();
        assert!(matches!(report.metrics["nan"], MetricValue::Invalid { .. }));
        assert!(matches!(report.metrics["boom"], MetricValue::Failed { .. }));
        assert_eq!(report.metrics["missing"], MetricValue::Absent);
        assert_eq!(report.get("l2q"), Some(0.0));
    }
}
