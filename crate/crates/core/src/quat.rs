//! Unit quaternions stored as `(w, x, y, z)`.
//!
//! Constructors canonicalize to `w >= 0` so that `q` and `-q` (the same
//! rotation) share one representative.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norm tolerance for the unit-quaternion invariant.
pub const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for Quat {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Quat {
    pub const IDENTITY: Quat = Quat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Builds a quaternion from raw components, flipping the sign when `w < 0`.
    /// The components are not normalized.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat { w, x, y, z }.canonical()
    }

    pub fn from_array(q: [f64; 4]) -> Self {
        Self::new(q[0], q[1], q[2], q[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::IDENTITY;
        }
        let a = axis / n;
        let (s, c) = (0.5 * angle).sin_cos();
        Self::new(c, a.x * s, a.y * s, a.z * s)
    }

    pub fn canonical(self) -> Self {
        if self.w < 0.0 {
            Quat {
                w: -self.w,
                x: -self.x,
                y: -self.y,
                z: -self.z,
            }
        } else {
            self
        }
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(&self, o: &Quat) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn scale(&self, s: f64) -> Quat {
        Quat {
            w: self.w * s,
            x: self.x * s,
            y: self.y * s,
            z: self.z * s,
        }
    }

    pub fn normalized(&self) -> Result<Quat> {
        let n = self.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::contract(format!(
                "quaternion {:?} cannot be normalized (norm {n})",
                self.to_array()
            )));
        }
        Ok(self.scale(1.0 / n).canonical())
    }

    pub fn is_unit(&self) -> bool {
        (self.norm() - 1.0).abs() <= UNIT_TOLERANCE
    }

    /// Hamilton product `self * o`.
    pub fn mul(&self, o: &Quat) -> Quat {
        Quat {
            w: self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            x: self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            y: self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            z: self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        }
    }

    pub fn conjugate(&self) -> Quat {
        Quat {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.to_matrix() * v
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        rotation_matrix(self.to_array())
    }

    /// Rotation angle separating two orientations, in `[0, pi]`.
    pub fn angle_to(&self, o: &Quat) -> f64 {
        let d = (self.dot(o).abs() / (self.norm() * o.norm())).min(1.0);
        2.0 * d.acos()
    }
}

/// Rotation matrix of a unit quaternion given as `[w, x, y, z]`.
///
/// The polynomial form is used as-is; callers normalize first when `q`
/// may have drifted.
pub fn rotation_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Partial derivatives of [`rotation_matrix`] with respect to `w, x, y, z`.
pub fn rotation_matrix_grad(q: [f64; 4]) -> [Matrix3<f64>; 4] {
    let [w, x, y, z] = q;
    let t = 2.0;
    [
        Matrix3::new(0.0, -t * z, t * y, t * z, 0.0, -t * x, -t * y, t * x, 0.0),
        Matrix3::new(
            0.0,
            t * y,
            t * z,
            t * y,
            -2.0 * t * x,
            -t * w,
            t * z,
            t * w,
            -2.0 * t * x,
        ),
        Matrix3::new(
            -2.0 * t * y,
            t * x,
            t * w,
            t * x,
            0.0,
            t * z,
            -t * w,
            t * z,
            -2.0 * t * y,
        ),
        Matrix3::new(
            -2.0 * t * z,
            -t * w,
            t * x,
            t * w,
            -2.0 * t * z,
            t * y,
            t * x,
            t * y,
            0.0,
        ),
    ]
}

/// Spherical linear interpolation along the shorter arc.
pub fn slerp(q0: &Quat, q1: &Quat, t: f64) -> Result<Quat> {
    let a = q0.normalized()?;
    let mut b = q1.normalized()?;
    let mut d = a.dot(&b);
    if d < 0.0 {
        b = b.scale(-1.0);
        d = -d;
    }
    let d = d.min(1.0);
    let theta = d.acos();
    let s = theta.sin();
    let (ka, kb) = if s < 1e-12 {
        (1.0 - t, t)
    } else {
        (((1.0 - t) * theta).sin() / s, (t * theta).sin() / s)
    };
    let q = Quat {
        w: ka * a.w + kb * b.w,
        x: ka * a.x + kb * b.x,
        y: ka * a.y + kb * b.y,
        z: ka * a.z + kb * b.z,
    };
    q.normalized()
}
