//! IMU sensor model, dead-reckoning propagation and accelerometer-driven
//! attitude feedback.
//!
//! World frame is ENU: the accelerometer of a level, resting sensor reads
//! `(0, 0, 9.81)`.

use nalgebra::{Matrix3x4, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{omega_matrix, quat_integrate, GeometryError, Quaternion, Transform};

pub const GRAVITY_MAGNITUDE: f64 = 9.81;

/// Largest accepted propagation step; longer gaps must be handled by the caller.
pub const MAX_PROPAGATION_DT: f64 = 0.1;

pub fn gravity() -> Vector3<f64> {
    Vector3::new(0.0, 0.0, GRAVITY_MAGNITUDE)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ImuError {
    #[error("propagation step {dt} s outside (0, {max}] s")]
    PropagationGap { dt: f64, max: f64 },
    #[error("accelerometer vector has zero norm")]
    ZeroAcceleration,
    #[error("implausible bias: {0}")]
    ImplausibleBias(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Raw inertial readout in the body frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    pub timestamp: f64,
    /// Specific force, m/s².
    pub accel: Vector3<f64>,
    /// Angular rate, rad/s.
    pub gyro: Vector3<f64>,
}

impl ImuSample {
    pub fn new(timestamp: f64, accel: Vector3<f64>, gyro: Vector3<f64>) -> Self {
        Self {
            timestamp,
            accel,
            gyro,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.timestamp.is_finite()
            && self.accel.iter().all(|v| v.is_finite())
            && self.gyro.iter().all(|v| v.is_finite())
    }
}

/// Upper limits on plausible bias magnitudes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasLimits {
    pub accel: f64,
    pub gyro: f64,
}

impl Default for BiasLimits {
    fn default() -> Self {
        Self {
            accel: 1.0,
            gyro: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ImuBias {
    pub accel_bias: Vector3<f64>,
    pub gyro_bias: Vector3<f64>,
}

impl ImuBias {
    pub fn new(accel_bias: Vector3<f64>, gyro_bias: Vector3<f64>) -> Self {
        Self {
            accel_bias,
            gyro_bias,
        }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    /// Rejects non-finite biases and magnitudes beyond `limits`.
    pub fn validate(&self, limits: &BiasLimits) -> Result<(), ImuError> {
        let finite = self
            .accel_bias
            .iter()
            .chain(self.gyro_bias.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(ImuError::ImplausibleBias("non-finite component".into()));
        }
        if self.accel_bias.norm() > limits.accel {
            return Err(ImuError::ImplausibleBias(format!(
                "accel bias {:.4} m/s² exceeds {}",
                self.accel_bias.norm(),
                limits.accel
            )));
        }
        if self.gyro_bias.norm() > limits.gyro {
            return Err(ImuError::ImplausibleBias(format!(
                "gyro bias {:.4} rad/s exceeds {}",
                self.gyro_bias.norm(),
                limits.gyro
            )));
        }
        Ok(())
    }
}

/// Coupled attitude / position / velocity state in the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NavState {
    /// Body to world attitude.
    pub q: Quaternion,
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
    pub timestamp: f64,
}

impl NavState {
    pub fn new(q: Quaternion, p: Vector3<f64>, v: Vector3<f64>, timestamp: f64) -> Self {
        Self { q, p, v, timestamp }
    }

    pub fn at_rest(timestamp: f64) -> Self {
        Self::new(Quaternion::identity(), Vector3::zeros(), Vector3::zeros(), timestamp)
    }

    /// Body pose `T_w_i`.
    pub fn pose(&self) -> Transform {
        Transform::new(self.q, self.p)
    }

    pub fn is_finite(&self) -> bool {
        self.q.is_finite()
            && self.p.iter().all(|v| v.is_finite())
            && self.v.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MadgwickConfig {
    /// Weight of the normalized gradient in the attitude derivative.
    pub fuse_weight: f64,
    /// The gradient is applied only when `| ‖a‖ − g | < accel_gate`, m/s².
    pub accel_gate: f64,
    pub gravity_magnitude: f64,
}

impl Default for MadgwickConfig {
    fn default() -> Self {
        Self {
            fuse_weight: 0.1,
            accel_gate: 0.2,
            gravity_magnitude: GRAVITY_MAGNITUDE,
        }
    }
}

pub fn apply_bias(sample: &ImuSample, bias: &ImuBias) -> ImuSample {
    ImuSample {
        timestamp: sample.timestamp,
        accel: sample.accel - bias.accel_bias,
        gyro: sample.gyro - bias.gyro_bias,
    }
}

/// First-order strapdown step over `dt` with a bias-compensated sample.
///
/// Position advances with the previous velocity and velocity with the
/// previous attitude, so the three updates all read the pre-step state.
pub fn propagate(state: &NavState, sample: &ImuSample, dt: f64) -> Result<NavState, ImuError> {
    if !(dt > 0.0 && dt <= MAX_PROPAGATION_DT) {
        return Err(ImuError::PropagationGap {
            dt,
            max: MAX_PROPAGATION_DT,
        });
    }
    if !sample.is_finite() || !state.is_finite() {
        return Err(GeometryError::NonFinite.into());
    }
    let q = quat_integrate(&state.q, &sample.gyro, dt)?;
    let p = state.p + state.v * dt;
    let v = state.v + (state.q.rotate(&sample.accel) - gravity()) * dt;
    Ok(NavState::new(q, p, v, state.timestamp + dt))
}

/// Gravity-alignment residual `R(q)ᵀ ẑ − a` and its Jacobian with respect
/// to `(q_w, q_x, q_y, q_z)`.
pub fn madgwick_objective(
    q: &Quaternion,
    accel_normalized: &Vector3<f64>,
) -> Result<(Vector3<f64>, Matrix3x4<f64>), ImuError> {
    if !accel_normalized.iter().all(|v| v.is_finite()) || !q.is_finite() {
        return Err(GeometryError::NonFinite.into());
    }
    if accel_normalized.norm() < f64::EPSILON {
        return Err(ImuError::ZeroAcceleration);
    }
    let (w, x, y, z) = (q.w, q.x, q.y, q.z);
    let a = accel_normalized;
    let residual = Vector3::new(
        2.0 * x * z - 2.0 * w * y - a.x,
        2.0 * y * z + 2.0 * w * x - a.y,
        1.0 - 2.0 * x * x - 2.0 * y * y - a.z,
    );
    #[rustfmt::skip]
    let jacobian = Matrix3x4::new(
        -2.0 * y, 2.0 * z, -2.0 * w, 2.0 * x,
        2.0 * x, 2.0 * w, 2.0 * z, 2.0 * y,
        0.0, -4.0 * x, -4.0 * y, 0.0,
    );
    Ok((residual, jacobian))
}

/// Gyro integration blended with one normalized gradient-descent step on the
/// gravity-alignment objective.
///
/// The gradient term is skipped when the accelerometer norm is far from
/// gravity (external acceleration) or when the gradient vanishes.
pub fn fused_orientation_step(
    attitude: &Quaternion,
    sample: &ImuSample,
    dt: f64,
    cfg: &MadgwickConfig,
) -> Result<Quaternion, ImuError> {
    let accel_norm = sample.accel.norm();
    let gated = (accel_norm - cfg.gravity_magnitude).abs() < cfg.accel_gate;
    if !gated || accel_norm < f64::EPSILON {
        return Ok(quat_integrate(attitude, &sample.gyro, dt)?);
    }
    let (f, j) = madgwick_objective(attitude, &(sample.accel / accel_norm))?;
    let gradient = j.transpose() * f;
    let gradient_norm = gradient.norm();
    if gradient_norm < 1e-12 {
        return Ok(quat_integrate(attitude, &sample.gyro, dt)?);
    }
    let qv = attitude.as_vector4();
    let q_dot = 0.5 * omega_matrix(&sample.gyro) * qv - cfg.fuse_weight * gradient / gradient_norm;
    Ok(Quaternion::from_vector4(&(qv + q_dot * dt)).normalize()?)
}

/// Owns a [`NavState`] and a bias estimate and advances them sample by sample.
#[derive(Debug, Clone)]
pub struct ImuPropagator {
    state: NavState,
    bias: ImuBias,
}

impl ImuPropagator {
    pub fn new(state: NavState, bias: ImuBias) -> Self {
        Self { state, bias }
    }

    pub fn state(&self) -> &NavState {
        &self.state
    }

    pub fn bias(&self) -> &ImuBias {
        &self.bias
    }

    pub fn set_bias(&mut self, bias: ImuBias) {
        self.bias = bias;
    }

    pub fn reset(&mut self, state: NavState) {
        self.state = state;
    }

    /// Consumes a raw sample stamped after the current state.
    pub fn step(&mut self, sample: &ImuSample) -> Result<&NavState, ImuError> {
        let dt = sample.timestamp - self.state.timestamp;
        let compensated = apply_bias(sample, &self.bias);
        let mut next = propagate(&self.state, &compensated, dt)?;
        next.timestamp = sample.timestamp;
        self.state = next;
        Ok(&self.state)
    }
}

/// Long-running attitude filter providing gravity-referenced roll and pitch.
#[derive(Debug, Clone)]
pub struct AttitudeFilter {
    attitude: Quaternion,
    timestamp: f64,
    config: MadgwickConfig,
    feedback: bool,
}

impl AttitudeFilter {
    pub fn new(attitude: Quaternion, timestamp: f64, config: MadgwickConfig, feedback: bool) -> Self {
        Self {
            attitude,
            timestamp,
            config,
            feedback,
        }
    }

    pub fn attitude(&self) -> Quaternion {
        self.attitude
    }

    pub fn timestamp(&self) -> f64 {
        self.timestamp
    }

    /// Advances with a bias-compensated sample. Gaps larger than the
    /// propagation limit only move the clock.
    pub fn update(&mut self, sample: &ImuSample) -> Result<(), ImuError> {
        let dt = sample.timestamp - self.timestamp;
        if dt <= 0.0 {
            return Ok(());
        }
        self.timestamp = sample.timestamp;
        if dt > MAX_PROPAGATION_DT {
            return Ok(());
        }
        self.attitude = if self.feedback {
            fused_orientation_step(&self.attitude, sample, dt, &self.config)?
        } else {
            quat_integrate(&self.attitude, &sample.gyro, dt)?
        };
        Ok(())
    }
}
