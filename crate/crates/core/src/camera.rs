//! Pinhole stereo rig model.

use nalgebra::{Matrix2x3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Quaternion, Transform};

/// Points closer than this along the optical axis are treated as behind the camera.
pub const MIN_DEPTH: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CameraError {
    #[error("focal lengths must be positive (fx = {fx}, fy = {fy})")]
    BadFocalLength { fx: f64, fy: f64 },
    #[error("stereo baseline must be positive")]
    ZeroBaseline,
    #[error("image size must be positive")]
    BadImageSize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinholeIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for PinholeIntrinsics {
    /// EuRoC-like VGA camera.
    fn default() -> Self {
        Self {
            fx: 458.0,
            fy: 457.0,
            cx: 367.0,
            cy: 248.0,
            width: 752,
            height: 480,
        }
    }
}

impl PinholeIntrinsics {
    /// Projects a point in camera coordinates; `None` if it is not in front.
    pub fn project(&self, p: &Vector3<f64>) -> Option<Vector2<f64>> {
        if p.z <= MIN_DEPTH {
            return None;
        }
        Some(Vector2::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    /// Derivative of the projection with respect to the camera-frame point.
    pub fn project_jacobian(&self, p: &Vector3<f64>) -> Matrix2x3<f64> {
        let iz = 1.0 / p.z;
        let iz2 = iz * iz;
        Matrix2x3::new(
            self.fx * iz,
            0.0,
            -self.fx * p.x * iz2,
            0.0,
            self.fy * iz,
            -self.fy * p.y * iz2,
        )
    }

    /// Ray through `pixel` with unit depth (`z = 1`).
    pub fn unproject(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        Vector3::new(
            (pixel.x - self.cx) / self.fx,
            (pixel.y - self.cy) / self.fy,
            1.0,
        )
    }

    pub fn in_bounds(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= 0.0
            && pixel.y >= 0.0
            && pixel.x < self.width as f64
            && pixel.y < self.height as f64
    }
}

/// Stereo pair rigidly mounted on the IMU.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub cam0: PinholeIntrinsics,
    pub cam1: PinholeIntrinsics,
    /// Maps c0 coordinates into c1 coordinates.
    pub t_c1_c0: Transform,
    /// Maps c0 coordinates into the IMU body frame.
    pub t_i_c0: Transform,
}

impl Default for CameraRig {
    fn default() -> Self {
        Self::forward_looking(PinholeIntrinsics::default(), 0.11)
    }
}

impl CameraRig {
    /// Rectified pair looking along body +x with c1 to the right of c0.
    ///
    /// Camera axes: x right, y down, z forward. The body frame is x forward,
    /// y left, z up.
    pub fn forward_looking(intrinsics: PinholeIntrinsics, baseline: f64) -> Self {
        #[rustfmt::skip]
        let r_i_c0 = nalgebra::Matrix3::new(
            0.0, 0.0, 1.0,
            -1.0, 0.0, 0.0,
            0.0, -1.0, 0.0,
        );
        Self {
            cam0: intrinsics,
            cam1: intrinsics,
            t_c1_c0: Transform::from_translation(Vector3::new(-baseline, 0.0, 0.0)),
            t_i_c0: Transform::new(
                Quaternion::from_rotation_matrix(&r_i_c0),
                Vector3::new(0.05, 0.02, -0.01),
            ),
        }
    }

    pub fn baseline(&self) -> f64 {
        self.t_c1_c0.translation.norm()
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        for cam in [&self.cam0, &self.cam1] {
            if !(cam.fx > 0.0 && cam.fy > 0.0) {
                return Err(CameraError::BadFocalLength {
                    fx: cam.fx,
                    fy: cam.fy,
                });
            }
            if cam.width == 0 || cam.height == 0 {
                return Err(CameraError::BadImageSize);
            }
        }
        if !(self.baseline() > 0.0) {
            return Err(CameraError::ZeroBaseline);
        }
        Ok(())
    }

    /// Camera pose `T_w_c0` for a body pose `T_w_i`.
    pub fn camera_pose(&self, body_pose: &Transform) -> Transform {
        body_pose * &self.t_i_c0
    }

    /// Body pose `T_w_i` for a camera pose `T_w_c0`.
    pub fn body_pose(&self, camera_pose: &Transform) -> Transform {
        camera_pose * &self.t_i_c0.inverse()
    }

    pub fn project_c0(&self, p_c0: &Vector3<f64>) -> Option<Vector2<f64>> {
        self.cam0.project(p_c0)
    }

    pub fn project_c1(&self, p_c0: &Vector3<f64>) -> Option<Vector2<f64>> {
        self.cam1.project(&self.t_c1_c0.transform_point(p_c0))
    }
}
