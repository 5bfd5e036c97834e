//! Quaternions, rigid transforms, interpolation and trajectory alignment.
//!
//! Every other module builds on these value types. Quaternions are Hamilton,
//! scalar first, and attitudes map body vectors into the world frame.

mod quaternion;
mod trajectory;
mod transform;

pub use quaternion::{omega_matrix, quat_integrate, right_jacobian_inv, skew, slerp, Quaternion};
pub use trajectory::{
    alignment_cost, associate, umeyama_align, Trajectory, ASSOCIATION_TOLERANCE,
};
pub use transform::{rotation_angle, Transform};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("non-finite input")]
    NonFinite,
    #[error("quaternion has zero norm")]
    ZeroNorm,
    #[error("negative time step {0}")]
    NegativeTimeStep(f64),
    #[error("timestamps must increase strictly ({previous} then {next})")]
    NonMonotonicTimestamp { previous: f64, next: f64 },
    #[error("trajectory lengths differ ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("alignment needs at least three non-collinear positions")]
    DegenerateAlignment,
    #[error("no poses could be associated")]
    AssociationFailed,
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
}
