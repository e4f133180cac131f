//! Unit quaternions: Hamilton product, right-handed frames, rotating column
//! vectors (`v' = q v q*`).

use crate::error::{Error, Result};
use nalgebra::{Matrix3, Vector3};

/// A rotation stored as `(w, x, y, z)` with unit norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitQuaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for UnitQuaternion {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl UnitQuaternion {
    pub const IDENTITY: UnitQuaternion = UnitQuaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Normalizes and canonicalizes `(w, x, y, z)`.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        if !(w.is_finite() && x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(Error::InvalidQuaternion);
        }
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if n < 1e-300 {
            return Err(Error::ZeroVector);
        }
        Ok(UnitQuaternion {
            w: w / n,
            x: x / n,
            y: y / n,
            z: z / n,
        }
        .canonical())
    }

    /// Like [`UnitQuaternion::new`] but maps near-zero input to identity.
    /// The boolean reports whether the reset happened.
    pub fn normalize_or_identity(w: f64, x: f64, y: f64, z: f64) -> (Self, bool) {
        let n2 = w * w + x * x + y * y + z * z;
        if !n2.is_finite() || n2.sqrt() < 1e-9 {
            return (Self::IDENTITY, true);
        }
        let n = n2.sqrt();
        (
            UnitQuaternion {
                w: w / n,
                x: x / n,
                y: y / n,
                z: z / n,
            },
            false,
        )
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Result<Self> {
        let n = axis.norm();
        if !n.is_finite() || !angle.is_finite() {
            return Err(Error::InvalidQuaternion);
        }
        if n < 1e-12 {
            return Err(Error::ZeroVector);
        }
        let (s, c) = (angle / 2.0).sin_cos();
        let a = axis / n;
        Self::new(c, s * a.x, s * a.y, s * a.z)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|c| c.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.as_array().iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// Picks the representative with `w >= 0`; when `w == 0` the first
    /// nonzero component is made positive.
    pub fn canonical(self) -> Self {
        let flip = if self.w != 0.0 {
            self.w < 0.0
        } else {
            [self.x, self.y, self.z]
                .into_iter()
                .find(|c| *c != 0.0)
                .is_some_and(|c| c < 0.0)
        };
        if flip {
            self.negated()
        } else {
            self
        }
    }

    pub fn is_canonical(&self) -> bool {
        self.canonical() == *self
    }

    pub fn negated(self) -> Self {
        UnitQuaternion {
            w: -self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    pub fn conjugate(self) -> Self {
        UnitQuaternion {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    /// Hamilton product without renormalization.
    #[inline]
    pub fn mul_raw(&self, b: &UnitQuaternion) -> UnitQuaternion {
        let a = self;
        UnitQuaternion {
            w: a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            x: a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            y: a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            z: a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        }
    }

    /// `self ∘ b`: applies `b` first, then `self`.
    pub fn compose(&self, b: &UnitQuaternion) -> Result<UnitQuaternion> {
        if !self.is_finite() || !b.is_finite() {
            return Err(Error::InvalidQuaternion);
        }
        let p = self.mul_raw(b);
        UnitQuaternion::new(p.w, p.x, p.y, p.z)
    }

    #[inline]
    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        // v + 2w (u x v) + 2 u x (u x v)
        let u = Vector3::new(self.x, self.y, self.z);
        let t = 2.0 * u.cross(v);
        v + self.w * t + u.cross(&t)
    }

    pub fn to_matrix(&self) -> Result<Matrix3<f64>> {
        if !self.is_finite() {
            return Err(Error::InvalidQuaternion);
        }
        let UnitQuaternion { w, x, y, z } = *self;
        Ok(Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ))
    }

    /// Shepperd's method; returns the canonical quaternion.
    pub fn from_matrix(m: &Matrix3<f64>) -> Result<UnitQuaternion> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidQuaternion);
        }
        let tr = m.trace();
        let (w, x, y, z);
        if tr > m[(0, 0)] && tr > m[(1, 1)] && tr > m[(2, 2)] {
            let s = 2.0 * (1.0 + tr).sqrt();
            w = 0.25 * s;
            x = (m[(2, 1)] - m[(1, 2)]) / s;
            y = (m[(0, 2)] - m[(2, 0)]) / s;
            z = (m[(1, 0)] - m[(0, 1)]) / s;
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = 2.0 * (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt();
            w = (m[(2, 1)] - m[(1, 2)]) / s;
            x = 0.25 * s;
            y = (m[(0, 1)] + m[(1, 0)]) / s;
            z = (m[(0, 2)] + m[(2, 0)]) / s;
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = 2.0 * (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt();
            w = (m[(0, 2)] - m[(2, 0)]) / s;
            x = (m[(0, 1)] + m[(1, 0)]) / s;
            y = 0.25 * s;
            z = (m[(1, 2)] + m[(2, 1)]) / s;
        } else {
            let s = 2.0 * (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt();
            w = (m[(1, 0)] - m[(0, 1)]) / s;
            x = (m[(0, 2)] + m[(2, 0)]) / s;
            y = (m[(1, 2)] + m[(2, 1)]) / s;
            z = 0.25 * s;
        }
        UnitQuaternion::new(w, x, y, z)
    }

    /// Rotation angle in `[0, π]`, i.e. `2 acos|w|`, evaluated through
    /// `atan2` to stay accurate near zero.
    pub fn angle(&self) -> f64 {
        let v = (self.x * self.x + self.y * self.y + self.z * self.z).sqrt();
        2.0 * v.atan2(self.w.abs())
    }

    /// Axis times angle, with the angle in `[0, π]`.
    pub fn rotation_vector(&self) -> Vector3<f64> {
        let q = self.canonical();
        let v = Vector3::new(q.x, q.y, q.z);
        let s = v.norm();
        if s < 1e-300 {
            return Vector3::zeros();
        }
        v * (self.angle() / s)
    }

    /// Minimal rotation taking the direction of `u` onto the direction of `v`.
    ///
    /// Antiparallel inputs yield a half-turn about the coordinate axis least
    /// aligned with `u`, projected orthogonal to `u`.
    pub fn shortest_arc(u: &Vector3<f64>, v: &Vector3<f64>) -> Result<UnitQuaternion> {
        let (nu, nv) = (u.norm(), v.norm());
        if !nu.is_finite() || !nv.is_finite() {
            return Err(Error::InvalidQuaternion);
        }
        if nu <= 1e-9 || nv <= 1e-9 {
            return Err(Error::ZeroVector);
        }
        let a = u / nu;
        let b = v / nv;
        let d = a.dot(&b);
        if d < -1.0 + 1e-12 {
            let k = (0..3).min_by(|&i, &j| a[i].abs().total_cmp(&a[j].abs())).unwrap();
            let mut e = Vector3::zeros();
            e[k] = 1.0;
            let axis = (e - a * a[k]).normalize();
            return UnitQuaternion::new(0.0, axis.x, axis.y, axis.z);
        }
        let c = a.cross(&b);
        UnitQuaternion::new(1.0 + d, c.x, c.y, c.z)
    }
}
