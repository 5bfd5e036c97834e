//! Per-frame visual-inertial tracking.
//!
//! Each frame runs: IMU propagation from the previous visual state, roll/pitch
//! feedforward, RANSAC PnP, pose-only BA, bias feedback, landmark update and
//! the keyframe decision, in that order. When too few landmarks are matched
//! the IMU prediction is reported instead, for a bounded time.

mod feedforward;
mod keyframe;
mod pnp;

pub use feedforward::{rollpitch_feedforward, GIMBAL_MARGIN};
pub use keyframe::{
    keyframe_decision, CorrectionMessage, KeyframeMessage, SnapshotEntry, KEYFRAME_ROTATION,
    KEYFRAME_TRANSLATION,
};
pub use pnp::{
    collinear, inframe_ba, pose_cost, ransac_pnp, PnpError, PnpEstimate, PoseRefineConfig,
    PoseRefinement, RansacConfig, MIN_CORRESPONDENCES,
};

use log::{debug, warn};
use nalgebra::{Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bias::{update_bias, InterframeRecord};
use crate::camera::CameraRig;
use crate::imu::{
    apply_bias, propagate, AttitudeFilter, BiasLimits, ImuBias, ImuError, ImuSample,
    MadgwickConfig, NavState,
};
use crate::landmark::{LandmarkMap, StereoObservation, DEFAULT_IIR_COEFF};
use crate::geometry::Transform;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FrontendError {
    #[error("tracking lost for {0:.3} s, longer than the IMU-only limit")]
    TrackingLost(f64),
    #[error("frame at {frame} is not after the previous frame at {previous}")]
    OutOfOrder { previous: f64, frame: f64 },
    #[error(transparent)]
    Imu(#[from] ImuError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrontendConfig {
    pub rig: CameraRig,
    pub madgwick: MadgwickConfig,
    /// Accelerometer feedback in the attitude filter; gyro-only otherwise.
    pub enable_madgwick: bool,
    pub enable_feedforward: bool,
    pub enable_bias_feedback: bool,
    pub enable_iir: bool,
    pub iir_coeff: f64,
    pub bias_smoothing: f64,
    pub bias_limits: BiasLimits,
    /// Longest stretch without visual tracking before giving up, s.
    pub max_imu_only: f64,
    pub ransac: RansacConfig,
    pub refine: PoseRefineConfig,
    pub seed: u64,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            rig: CameraRig::default(),
            madgwick: MadgwickConfig::default(),
            enable_madgwick: true,
            enable_feedforward: true,
            enable_bias_feedback: true,
            enable_iir: true,
            iir_coeff: DEFAULT_IIR_COEFF,
            bias_smoothing: 0.9,
            bias_limits: BiasLimits::default(),
            max_imu_only: 0.5,
            ransac: RansacConfig::default(),
            refine: PoseRefineConfig::default(),
            seed: 0,
        }
    }
}

/// Raw camera input for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameInput {
    pub frame_id: u64,
    pub timestamp: f64,
    pub observations: Vec<StereoObservation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrackingStatus {
    Visual,
    /// Visual pose from fewer inliers than the confidence threshold.
    LowConfidence,
    /// No visual fix; pose is the IMU prediction.
    ImuOnly,
}

/// Frontend output for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub frame_id: u64,
    pub timestamp: f64,
    /// `T_w_c0`.
    pub pose_estimate: Transform,
    pub nav_state: NavState,
    pub status: TrackingStatus,
    pub correspondences: usize,
    pub inliers: usize,
    pub reprojection_rms: f64,
    pub bias: ImuBias,
    pub keyframe: Option<KeyframeMessage>,
}

pub struct Frontend {
    config: FrontendConfig,
    map: LandmarkMap,
    rng: ChaCha8Rng,
    attitude: AttitudeFilter,
    bias: ImuBias,
    /// Latest state, visual or predicted.
    state: NavState,
    previous_visual: bool,
    initialized: bool,
    lost_since: Option<f64>,
    last_frame_id: Option<u64>,
    last_keyframe_pose: Option<Transform>,
    next_keyframe_id: u64,
    last_correction: Option<u64>,
    last_loop_id: u64,
}

impl Frontend {
    /// `initial` is the body state at the first frame's timestamp.
    pub fn new(config: FrontendConfig, initial: NavState) -> Self {
        Self {
            attitude: AttitudeFilter::new(
                initial.q,
                initial.timestamp,
                config.madgwick,
                config.enable_madgwick,
            ),
            map: LandmarkMap::new(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            bias: ImuBias::zero(),
            state: initial,
            previous_visual: true,
            initialized: false,
            lost_since: None,
            last_frame_id: None,
            last_keyframe_pose: None,
            next_keyframe_id: 0,
            last_correction: None,
            last_loop_id: 0,
            config,
        }
    }

    pub fn config(&self) -> &FrontendConfig {
        &self.config
    }

    pub fn map(&self) -> &LandmarkMap {
        &self.map
    }

    pub fn bias(&self) -> &ImuBias {
        &self.bias
    }

    pub fn state(&self) -> &NavState {
        &self.state
    }

    /// Processes one frame. `imu` must cover `(previous frame, this frame]`;
    /// samples outside that range are ignored.
    pub fn process_frame(&mut self, input: &FrameInput, imu: &[ImuSample]) -> Result<Frame, FrontendError> {
        let rig = self.config.rig;
        if !self.initialized {
            return Ok(self.initialize(input));
        }
        if input.timestamp <= self.state.timestamp {
            return Err(FrontendError::OutOfOrder {
                previous: self.state.timestamp,
                frame: input.timestamp,
            });
        }

        // IMU propagation from the previous state
        let start = self.state;
        let mut predicted = start;
        let mut imu_states = Vec::new();
        for sample in imu
            .iter()
            .filter(|s| s.timestamp > start.timestamp && s.timestamp <= input.timestamp)
        {
            let compensated = apply_bias(sample, &self.bias);
            self.attitude.update(&compensated)?;
            let dt = sample.timestamp - predicted.timestamp;
            let mut next = propagate(&predicted, &compensated, dt)?;
            next.timestamp = sample.timestamp;
            predicted = next;
            imu_states.push(next);
        }
        predicted.timestamp = input.timestamp;

        // roll/pitch feedforward into the visual initial guess
        let mut guess_body = predicted.pose();
        if self.config.enable_feedforward {
            guess_body.rotation = rollpitch_feedforward(&guess_body.rotation, &self.attitude.attitude());
        }
        let guess_c0 = rig.camera_pose(&guess_body);

        let (points, pixels): (Vec<Vector3<f64>>, Vec<Vector2<f64>>) = input
            .observations
            .iter()
            .filter_map(|obs| {
                let lm = self.map.get(obs.landmark_id)?;
                lm.has_valid_depth.then_some((lm.position_w, obs.pixel_c0))
            })
            .unzip();
        let correspondences = points.len();

        let visual = ransac_pnp(&points, &pixels, &rig, &guess_c0, &self.config.ransac).and_then(|est| {
            let inlier_points: Vec<_> = select(&points, &est.inliers);
            let inlier_pixels: Vec<_> = select(&pixels, &est.inliers);
            let refined = inframe_ba(&est.pose, &inlier_points, &inlier_pixels, &rig, &self.config.refine)?;
            let rms = (pose_cost(&refined.pose, &inlier_points, &inlier_pixels, &rig, f64::INFINITY)
                / inlier_points.len() as f64)
                .sqrt();
            Ok((est, refined, rms))
        });

        let (est, refined, rms) = match visual {
            Ok(v) => v,
            Err(err) => return self.imu_only(input, predicted, correspondences, err),
        };

        let pose_c0 = refined.pose;
        let body = rig.body_pose(&pose_c0);
        let dt = input.timestamp - start.timestamp;
        // chord velocity carried from the interval midpoint to the frame time
        let chord = (body.translation - start.p) / dt;
        let t_mid = 0.5 * (start.timestamp + input.timestamp);
        let velocity = match (
            imu_states.iter().min_by(|a, b| {
                (a.timestamp - t_mid).abs().total_cmp(&(b.timestamp - t_mid).abs())
            }),
            imu_states.last(),
        ) {
            (Some(mid), Some(last)) => chord + (last.v - mid.v),
            _ => chord,
        };
        let visual_state = NavState::new(body.rotation, body.translation, velocity, input.timestamp);

        if self.config.enable_bias_feedback && self.previous_visual && !imu_states.is_empty() {
            let record = InterframeRecord {
                t_a: start.timestamp,
                t_b: input.timestamp,
                visual_a: start,
                visual_b: visual_state,
                imu_states,
            };
            match update_bias(&record, &self.bias, self.config.bias_smoothing, &self.config.bias_limits) {
                Ok(update) => self.bias = update.bias,
                Err(err) => debug!("bias update skipped: {err}"),
            }
        }

        let iir = self.config.enable_iir.then_some(self.config.iir_coeff);
        self.map
            .integrate(input.frame_id, &input.observations, &pose_c0, &rig, iir, &mut self.rng);
        self.map.lifecycle_sweep(input.frame_id, &pose_c0, &rig);

        self.state = visual_state;
        self.previous_visual = true;
        self.lost_since = None;
        self.last_frame_id = Some(input.frame_id);
        let keyframe = self.maybe_keyframe(input, &pose_c0);
        Ok(Frame {
            frame_id: input.frame_id,
            timestamp: input.timestamp,
            pose_estimate: pose_c0,
            nav_state: visual_state,
            status: if est.low_confidence {
                TrackingStatus::LowConfidence
            } else {
                TrackingStatus::Visual
            },
            correspondences,
            inliers: est.inlier_count,
            reprojection_rms: rms,
            bias: self.bias,
            keyframe,
        })
    }

    fn initialize(&mut self, input: &FrameInput) -> Frame {
        let rig = self.config.rig;
        self.attitude = AttitudeFilter::new(
            self.state.q,
            input.timestamp,
            self.config.madgwick,
            self.config.enable_madgwick,
        );
        self.state.timestamp = input.timestamp;
        let pose_c0 = rig.camera_pose(&self.state.pose());
        self.map
            .integrate(input.frame_id, &input.observations, &pose_c0, &rig, None, &mut self.rng);
        self.initialized = true;
        self.last_frame_id = Some(input.frame_id);
        let keyframe = self.maybe_keyframe(input, &pose_c0);
        Frame {
            frame_id: input.frame_id,
            timestamp: input.timestamp,
            pose_estimate: pose_c0,
            nav_state: self.state,
            status: TrackingStatus::Visual,
            correspondences: 0,
            inliers: 0,
            reprojection_rms: 0.0,
            bias: self.bias,
            keyframe,
        }
    }

    fn imu_only(
        &mut self,
        input: &FrameInput,
        predicted: NavState,
        correspondences: usize,
        cause: PnpError,
    ) -> Result<Frame, FrontendError> {
        let since = *self.lost_since.get_or_insert(self.state.timestamp);
        let lost_for = input.timestamp - since;
        if lost_for > self.config.max_imu_only {
            return Err(FrontendError::TrackingLost(lost_for));
        }
        warn!(
            "frame {}: {cause}; continuing on IMU prediction ({lost_for:.3} s)",
            input.frame_id
        );
        // the map is kept as is so tracking can resume against it
        self.state = predicted;
        self.previous_visual = false;
        self.last_frame_id = Some(input.frame_id);
        Ok(Frame {
            frame_id: input.frame_id,
            timestamp: input.timestamp,
            pose_estimate: self.config.rig.camera_pose(&predicted.pose()),
            nav_state: predicted,
            status: TrackingStatus::ImuOnly,
            correspondences,
            inliers: 0,
            reprojection_rms: f64::NAN,
            bias: self.bias,
            keyframe: None,
        })
    }

    fn maybe_keyframe(&mut self, input: &FrameInput, pose_c0: &Transform) -> Option<KeyframeMessage> {
        if !keyframe_decision(pose_c0, self.last_keyframe_pose.as_ref()) {
            return None;
        }
        let landmarks: Vec<SnapshotEntry> = input
            .observations
            .iter()
            .filter_map(|obs| {
                let lm = self.map.get(obs.landmark_id)?;
                lm.has_valid_depth.then_some(SnapshotEntry {
                    landmark_id: obs.landmark_id,
                    position_w: lm.position_w,
                    pixel_c0: obs.pixel_c0,
                    pixel_c1: obs.pixel_c1,
                })
            })
            .collect();
        let message = KeyframeMessage {
            keyframe_id: self.next_keyframe_id,
            frame_id: input.frame_id,
            timestamp: input.timestamp,
            pose: *pose_c0,
            landmarks,
            applied_sequence: self.last_correction.unwrap_or(0),
            loop_epoch: self.last_loop_id,
        };
        self.next_keyframe_id += 1;
        self.last_keyframe_pose = Some(*pose_c0);
        Some(message)
    }

    /// Applies a mapping-stage correction between frames. Messages older than
    /// one already applied are ignored; returns whether it was applied.
    pub fn apply_correction(&mut self, msg: &CorrectionMessage) -> bool {
        if self.last_correction.is_some_and(|s| msg.sequence <= s) || !msg.correction.is_finite() {
            return false;
        }
        self.last_correction = Some(msg.sequence);
        if let Some(id) = msg.loop_id {
            self.last_loop_id = self.last_loop_id.max(id);
        }
        let c = msg.correction;
        let r = c.rotation;
        self.state.q = (r * self.state.q).normalize().unwrap_or(self.state.q);
        self.state.p = c.transform_point(&self.state.p);
        self.state.v = r.rotate(&self.state.v);
        if let Some(kf) = self.last_keyframe_pose.as_mut() {
            *kf = c * *kf;
        }
        let updates: std::collections::BTreeMap<_, _> = msg.landmark_updates.iter().copied().collect();
        for lm in self.map.iter_mut() {
            lm.position_w = match updates.get(&lm.id) {
                Some(p) if lm.has_valid_depth => *p,
                _ => c.transform_point(&lm.position_w),
            };
        }
        true
    }

    /// Camera pose `T_w_c0` of the latest state.
    pub fn camera_pose(&self) -> Transform {
        self.config.rig.camera_pose(&self.state.pose())
    }
}

fn select<T: Copy>(items: &[T], mask: &[bool]) -> Vec<T> {
    items
        .iter()
        .zip(mask)
        .filter(|(_, &keep)| keep)
        .map(|(x, _)| *x)
        .collect()
}
