use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use super::GeometryError;

/// Below this rotation angle the small-angle series are used for exp/log.
const SMALL_ANGLE: f64 = 1e-8;

/// Unit quaternion, Hamilton convention, scalar first.
///
/// A quaternion `q` used as an attitude maps body-frame vectors into the
/// world frame: `v_w = R(q) v_b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for Quaternion {
    fn default() -> Self {
        Self::identity()
    }
}

impl Quaternion {
    pub const fn identity() -> Self {
        Self {
            w: 1.0,
            x: 0.0,
            y: 0.0,
            z: 0.0,
        }
    }

    /// Raw constructor. The result is not normalized.
    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    /// Builds a unit quaternion from arbitrary components.
    pub fn normalized(w: f64, x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        Self::new(w, x, y, z).normalize()
    }

    pub fn from_vector4(v: &Vector4<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn as_vector4(&self) -> Vector4<f64> {
        Vector4::new(self.w, self.x, self.y, self.z)
    }

    pub fn vec(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn is_finite(&self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalize(&self) -> Result<Self, GeometryError> {
        if !self.is_finite() {
            return Err(GeometryError::NonFinite);
        }
        let n = self.norm();
        if n < f64::EPSILON {
            return Err(GeometryError::ZeroNorm);
        }
        Ok(Self::new(self.w / n, self.x / n, self.y / n, self.z / n))
    }

    pub fn conjugate(&self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    /// Inverse of a unit quaternion.
    pub fn inverse(&self) -> Self {
        self.conjugate()
    }

    pub fn neg(&self) -> Self {
        Self::new(-self.w, -self.x, -self.y, -self.z)
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    /// Rotation about a unit axis by `angle` radians.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n < f64::EPSILON {
            return Self::identity();
        }
        let (s, c) = (0.5 * angle).sin_cos();
        let a = axis / n;
        Self::new(c, s * a.x, s * a.y, s * a.z)
    }

    /// Exponential map from a rotation vector.
    pub fn exp(rotation_vector: &Vector3<f64>) -> Self {
        let theta = rotation_vector.norm();
        if theta < SMALL_ANGLE {
            let h = 0.5 * rotation_vector;
            let q = Self::new(1.0, h.x, h.y, h.z);
            let n = q.norm();
            return Self::new(q.w / n, q.x / n, q.y / n, q.z / n);
        }
        Self::from_axis_angle(rotation_vector, theta)
    }

    /// Logarithm to a rotation vector with angle in `[0, π]`.
    pub fn log(&self) -> Vector3<f64> {
        // take the shortest-arc representative
        let q = if self.w < 0.0 { self.neg() } else { *self };
        let v = q.vec();
        let s = v.norm();
        if s < SMALL_ANGLE {
            return 2.0 * v / q.w;
        }
        let theta = 2.0 * s.atan2(q.w);
        v * (theta / s)
    }

    /// Geodesic rotation angle in `[0, π]`.
    pub fn angle(&self) -> f64 {
        let s = self.vec().norm();
        2.0 * s.atan2(self.w.abs())
    }

    /// Angle of the relative rotation between two attitudes.
    pub fn angle_to(&self, other: &Self) -> f64 {
        (self.inverse() * *other).angle()
    }

    /// Rotation equality up to the double cover (q and -q are the same rotation).
    pub fn rotation_eq(&self, other: &Self, tol: f64) -> bool {
        self.angle_to(other) <= tol
    }

    /// Rotation matrix, transcribed entry by entry for scalar-first components.
    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        Matrix3::new(
            1.0 - 2.0 * y * y - 2.0 * z * z,
            2.0 * x * y - 2.0 * z * w,
            2.0 * x * z + 2.0 * y * w,
            2.0 * x * y + 2.0 * z * w,
            1.0 - 2.0 * x * x - 2.0 * z * z,
            2.0 * y * z - 2.0 * x * w,
            2.0 * x * z - 2.0 * y * w,
            2.0 * y * z + 2.0 * x * w,
            1.0 - 2.0 * x * x - 2.0 * y * y,
        )
    }

    /// Unit quaternion from a proper rotation matrix (Shepperd's method).
    pub fn from_rotation_matrix(m: &Matrix3<f64>) -> Self {
        let trace = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
        let q = if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            Self::new(
                0.25 * s,
                (m[(2, 1)] - m[(1, 2)]) / s,
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(1, 0)] - m[(0, 1)]) / s,
            )
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
            Self::new(
                (m[(2, 1)] - m[(1, 2)]) / s,
                0.25 * s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
            )
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
            Self::new(
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                0.25 * s,
                (m[(1, 2)] + m[(2, 1)]) / s,
            )
        } else {
            let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
            Self::new(
                (m[(1, 0)] - m[(0, 1)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
                (m[(1, 2)] + m[(2, 1)]) / s,
                0.25 * s,
            )
        };
        let n = q.norm();
        Self::new(q.w / n, q.x / n, q.y / n, q.z / n)
    }

    /// Rotates a vector: `R(q) v`.
    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        // v + 2w (u x v) + 2 u x (u x v)
        let u = self.vec();
        let t = 2.0 * u.cross(v);
        v + self.w * t + u.cross(&t)
    }

    /// Rotation `Rz(yaw) Ry(pitch) Rx(roll)`.
    pub fn from_euler_zyx(roll: f64, pitch: f64, yaw: f64) -> Self {
        let qz = Self::from_axis_angle(&Vector3::z(), yaw);
        let qy = Self::from_axis_angle(&Vector3::y(), pitch);
        let qx = Self::from_axis_angle(&Vector3::x(), roll);
        qz * qy * qx
    }

    /// `(roll, pitch, yaw)` for the ZYX convention used by [`Quaternion::from_euler_zyx`].
    pub fn to_euler_zyx(&self) -> (f64, f64, f64) {
        let r = self.rotation_matrix();
        let pitch = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
        let roll = r[(2, 1)].atan2(r[(2, 2)]);
        let yaw = r[(1, 0)].atan2(r[(0, 0)]);
        (roll, pitch, yaw)
    }
}

impl Mul for Quaternion {
    type Output = Quaternion;

    /// Hamilton product.
    fn mul(self, r: Quaternion) -> Quaternion {
        let l = self;
        Quaternion::new(
            l.w * r.w - l.x * r.x - l.y * r.y - l.z * r.z,
            l.w * r.x + l.x * r.w + l.y * r.z - l.z * r.y,
            l.w * r.y - l.x * r.z + l.y * r.w + l.z * r.x,
            l.w * r.z + l.x * r.y - l.y * r.x + l.z * r.w,
        )
    }
}

/// Quaternion integration matrix `Ω(ω)` such that `q ⊗ (0, ω) = Ω(ω) q`.
pub fn omega_matrix(omega: &Vector3<f64>) -> Matrix4<f64> {
    let (wx, wy, wz) = (omega.x, omega.y, omega.z);
    Matrix4::new(
        0.0, -wx, -wy, -wz, //
        wx, 0.0, wz, -wy, //
        wy, -wz, 0.0, wx, //
        wz, wy, -wx, 0.0,
    )
}

/// One first-order attitude integration step followed by renormalization.
///
/// `omega` is the body-frame angular rate held constant over `dt`.
pub fn quat_integrate(
    q: &Quaternion,
    omega: &Vector3<f64>,
    dt: f64,
) -> Result<Quaternion, GeometryError> {
    if !q.is_finite() || !omega.iter().all(|v| v.is_finite()) || !dt.is_finite() {
        return Err(GeometryError::NonFinite);
    }
    if dt < 0.0 {
        return Err(GeometryError::NegativeTimeStep(dt));
    }
    let qv = q.as_vector4();
    let next = qv + 0.5 * omega_matrix(omega) * qv * dt;
    Quaternion::from_vector4(&next).normalize()
}

/// Spherical linear interpolation along the shortest arc.
pub fn slerp(qa: &Quaternion, qb: &Quaternion, t: f64) -> Quaternion {
    let mut cos_half = qa.dot(qb);
    let mut b = *qb;
    if cos_half < 0.0 {
        b = b.neg();
        cos_half = -cos_half;
    }
    let (ka, kb) = if cos_half > 1.0 - 1e-9 {
        (1.0 - t, t)
    } else {
        let half = cos_half.clamp(-1.0, 1.0).acos();
        let s = half.sin();
        (((1.0 - t) * half).sin() / s, (t * half).sin() / s)
    };
    let q = Quaternion::new(
        ka * qa.w + kb * b.w,
        ka * qa.x + kb * b.x,
        ka * qa.y + kb * b.y,
        ka * qa.z + kb * b.z,
    );
    let n = q.norm();
    Quaternion::new(q.w / n, q.x / n, q.y / n, q.z / n)
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of the SO(3) right Jacobian evaluated at rotation vector `phi`.
pub fn right_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = skew(phi);
    if theta < 1e-6 {
        return Matrix3::identity() + 0.5 * k + k * k / 12.0;
    }
    let coeff = 1.0 / (theta * theta) - (1.0 + theta.cos()) / (2.0 * theta * theta.sin());
    Matrix3::identity() + 0.5 * k + coeff * k * k
}
