use std::ops::Mul;

use nalgebra::{Matrix3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::quaternion::{skew, Quaternion};

/// Rigid transform `T_a_b`, mapping points expressed in frame `b` into frame `a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub rotation: Quaternion,
    pub translation: Vector3<f64>,
}

impl Default for Transform {
    fn default() -> Self {
        Self::identity()
    }
}

impl Transform {
    pub fn identity() -> Self {
        Self {
            rotation: Quaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Quaternion, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::new(Quaternion::identity(), translation)
    }

    pub fn from_rotation(rotation: Quaternion) -> Self {
        Self::new(rotation, Vector3::zeros())
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.is_finite() && self.translation.iter().all(|v| v.is_finite())
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.rotation_matrix()
    }

    pub fn inverse(&self) -> Self {
        let inv = self.rotation.inverse();
        Self::new(inv, -inv.rotate(&self.translation))
    }

    pub fn compose(&self, other: &Transform) -> Self {
        Self::new(
            renormalize(self.rotation * other.rotation),
            self.rotation.rotate(&other.translation) + self.translation,
        )
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(p) + self.translation
    }

    /// Applies the inverse transform without forming it.
    pub fn inverse_transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse().rotate(&(p - self.translation))
    }

    /// Geodesic angle of the rotation part, in `[0, π]`.
    pub fn rotation_angle(&self) -> f64 {
        self.rotation.angle()
    }

    /// Right-perturbation update `T ∘ (Exp(φ), ρ)` with increment `[φ; ρ]`.
    pub fn retract(&self, delta: &Vector6<f64>) -> Self {
        let phi = delta.fixed_rows::<3>(0).into_owned();
        let rho = delta.fixed_rows::<3>(3).into_owned();
        Self::new(
            renormalize(self.rotation * Quaternion::exp(&phi)),
            self.translation + self.rotation.rotate(&rho),
        )
    }

    /// SE(3) exponential of the twist `[ρ; φ]` (translation part first).
    pub fn exp(twist: &Vector6<f64>) -> Self {
        let rho = twist.fixed_rows::<3>(0).into_owned();
        let phi = twist.fixed_rows::<3>(3).into_owned();
        Self::new(Quaternion::exp(&phi), left_jacobian(&phi) * rho)
    }

    /// SE(3) logarithm, returned as `[ρ; φ]`.
    pub fn log(&self) -> Vector6<f64> {
        let phi = self.rotation.log();
        let rho = left_jacobian_inv(&phi) * self.translation;
        Vector6::new(rho.x, rho.y, rho.z, phi.x, phi.y, phi.z)
    }

    /// True when both rotation and translation agree within the tolerances.
    pub fn approx_eq(&self, other: &Transform, rot_tol: f64, trans_tol: f64) -> bool {
        self.rotation.rotation_eq(&other.rotation, rot_tol)
            && (self.translation - other.translation).norm() <= trans_tol
    }
}

impl Mul for Transform {
    type Output = Transform;

    fn mul(self, rhs: Transform) -> Transform {
        self.compose(&rhs)
    }
}

impl Mul<&Transform> for &Transform {
    type Output = Transform;

    fn mul(self, rhs: &Transform) -> Transform {
        self.compose(rhs)
    }
}

/// Geodesic angle of the rotation part of `t`.
pub fn rotation_angle(t: &Transform) -> f64 {
    t.rotation_angle()
}

fn renormalize(q: Quaternion) -> Quaternion {
    let n = q.norm();
    Quaternion::new(q.w / n, q.x / n, q.y / n, q.z / n)
}

fn left_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = skew(phi);
    if theta < 1e-6 {
        return Matrix3::identity() + 0.5 * k + k * k / 6.0;
    }
    let t2 = theta * theta;
    Matrix3::identity() + (1.0 - theta.cos()) / t2 * k + (theta - theta.sin()) / (t2 * theta) * k * k
}

fn left_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = skew(phi);
    if theta < 1e-6 {
        return Matrix3::identity() - 0.5 * k + k * k / 12.0;
    }
    let half = 0.5 * theta;
    let coeff = 1.0 / (theta * theta) - (1.0 + theta.cos()) / (2.0 * theta * theta.sin());
    // cot form is singular at π; fall back to the half-angle expression there
    let coeff = if coeff.is_finite() {
        coeff
    } else {
        1.0 / (theta * theta) * (1.0 - half / half.tan())
    };
    Matrix3::identity() - 0.5 * k + coeff * k * k
}
