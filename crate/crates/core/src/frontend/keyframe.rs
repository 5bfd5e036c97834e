use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::Transform;
use crate::landmark::LandmarkId;

pub const KEYFRAME_TRANSLATION: f64 = 0.1;
pub const KEYFRAME_ROTATION: f64 = 0.2;

/// One landmark as seen from a keyframe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub landmark_id: LandmarkId,
    pub position_w: Vector3<f64>,
    pub pixel_c0: Vector2<f64>,
    pub pixel_c1: Option<Vector2<f64>>,
}

/// Immutable copy of a frame handed to the mapping stages.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct KeyframeMessage {
    pub keyframe_id: u64,
    pub frame_id: u64,
    pub timestamp: f64,
    /// `T_w_c0`.
    pub pose: Transform,
    pub landmarks: Vec<SnapshotEntry>,
    /// Sequence of the last correction already folded into `pose`.
    pub applied_sequence: u64,
    /// Id of the last loop correction already folded into `pose`.
    pub loop_epoch: u64,
}

impl KeyframeMessage {
    pub fn landmark_ids(&self) -> impl Iterator<Item = LandmarkId> + '_ {
        self.landmarks.iter().map(|e| e.landmark_id)
    }
}

/// Pose fix produced by the mapping stages. `correction` is left-composed onto
/// every world-frame quantity the frontend holds.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CorrectionMessage {
    pub sequence: u64,
    pub reference_keyframe_id: u64,
    pub correction: Transform,
    pub landmark_updates: Vec<(LandmarkId, Vector3<f64>)>,
    /// Set on corrections that came from a loop closure.
    pub loop_id: Option<u64>,
}

/// Whether `current` has moved far enough from the last keyframe.
pub fn keyframe_decision(current: &Transform, last_keyframe: Option<&Transform>) -> bool {
    let Some(last) = last_keyframe else {
        return true;
    };
    let delta = last.inverse() * *current;
    delta.translation.norm() > KEYFRAME_TRANSLATION || delta.rotation_angle() > KEYFRAME_ROTATION
}
