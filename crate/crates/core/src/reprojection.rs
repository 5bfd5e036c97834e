//! Reprojection residuals, their analytic Jacobians and the Huber kernel,
//! shared by the pose-only and windowed optimizers.
//!
//! Camera poses are `T_w_c0` and are perturbed on the right:
//! `T ← T ∘ (Exp(φ), ρ)` with increment `[φ; ρ]`.

use nalgebra::{Matrix2x3, Matrix2x6, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::{CameraRig, MIN_DEPTH};
use crate::geometry::{skew, Transform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CameraIndex {
    Left,
    Right,
}

/// Residual `π(T⁻¹ X) − m` with derivatives wrt the pose increment and the point.
#[derive(Debug, Clone, Copy)]
pub struct Reprojection {
    pub residual: Vector2<f64>,
    pub d_pose: Matrix2x6<f64>,
    pub d_point: Matrix2x3<f64>,
}

pub fn predict(
    pose_w_c0: &Transform,
    point_w: &Vector3<f64>,
    rig: &CameraRig,
    camera: CameraIndex,
) -> Option<Vector2<f64>> {
    let p_c0 = pose_w_c0.inverse_transform_point(point_w);
    match camera {
        CameraIndex::Left => rig.project_c0(&p_c0),
        CameraIndex::Right => rig.project_c1(&p_c0),
    }
}

/// Linearized reprojection of a world point; `None` if it falls behind the camera.
pub fn linearize(
    pose_w_c0: &Transform,
    point_w: &Vector3<f64>,
    measurement: &Vector2<f64>,
    rig: &CameraRig,
    camera: CameraIndex,
) -> Option<Reprojection> {
    let r_wc = pose_w_c0.rotation_matrix();
    let p_c0 = r_wc.transpose() * (point_w - pose_w_c0.translation);
    let (p_cam, intrinsics, r_cam_c0) = match camera {
        CameraIndex::Left => (p_c0, &rig.cam0, Matrix3::identity()),
        CameraIndex::Right => (
            rig.t_c1_c0.transform_point(&p_c0),
            &rig.cam1,
            rig.t_c1_c0.rotation_matrix(),
        ),
    };
    if p_cam.z <= MIN_DEPTH {
        return None;
    }
    let predicted = intrinsics.project(&p_cam)?;
    let j_proj = intrinsics.project_jacobian(&p_cam) * r_cam_c0;
    let mut d_pose = Matrix2x6::zeros();
    d_pose
        .fixed_view_mut::<2, 3>(0, 0)
        .copy_from(&(j_proj * skew(&p_c0)));
    d_pose.fixed_view_mut::<2, 3>(0, 3).copy_from(&(-j_proj));
    Some(Reprojection {
        residual: predicted - measurement,
        d_pose,
        d_point: j_proj * r_wc.transpose(),
    })
}

/// Huber kernel applied to a squared residual norm.
pub fn huber_cost(squared_norm: f64, delta: f64) -> f64 {
    if squared_norm <= delta * delta {
        squared_norm
    } else {
        2.0 * delta * squared_norm.sqrt() - delta * delta
    }
}

/// IRLS weight matching [`huber_cost`].
pub fn huber_weight(norm: f64, delta: f64) -> f64 {
    if norm <= delta {
        1.0
    } else {
        delta / norm
    }
}
