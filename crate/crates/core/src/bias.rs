//! Interframe gyroscope and accelerometer bias estimation.
//!
//! Between two camera frames A and B the IMU is propagated from the visual
//! state at A. Whatever separates the propagated state from the visual state
//! at B (attitude) or at the interval midpoint (velocity) is attributed to
//! residual bias, assuming the bias is constant over the interval and the
//! sensor noise is negligible.

use nalgebra::Vector3;
use thiserror::Error;

use crate::geometry::{slerp, Quaternion};
use crate::imu::{BiasLimits, ImuBias, NavState};

/// Largest attitude discrepancy for which the small-angle gyro estimate is used, rad.
pub const MAX_GYRO_DISCREPANCY: f64 = 0.3;
/// Largest velocity discrepancy for which the accel estimate is used, m/s.
pub const MAX_VELOCITY_DISCREPANCY: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BiasError {
    #[error("elapsed time must be positive, got {0}")]
    NonPositiveInterval(f64),
    #[error("attitude discrepancy {0:.3} rad too large for a small-angle estimate")]
    AttitudeDiscrepancy(f64),
    #[error("velocity discrepancy {0:.3} m/s too large for a first-order estimate")]
    VelocityDiscrepancy(f64),
    #[error("interframe record has no IMU states")]
    EmptyRecord,
    #[error("invalid interframe record: {0}")]
    InvalidRecord(String),
}

/// Visual states at both ends of a frame interval plus the IMU states
/// propagated from the first one.
#[derive(Debug, Clone, PartialEq)]
pub struct InterframeRecord {
    pub t_a: f64,
    pub t_b: f64,
    pub visual_a: NavState,
    pub visual_b: NavState,
    /// States at IMU timestamps in `(t_a, t_b]`, propagated from `visual_a`
    /// with the bias compensation that was active during the interval.
    pub imu_states: Vec<NavState>,
}

impl InterframeRecord {
    pub fn validate(&self) -> Result<(), BiasError> {
        if self.t_b <= self.t_a {
            return Err(BiasError::NonPositiveInterval(self.t_b - self.t_a));
        }
        let mut prev = self.t_a;
        for s in &self.imu_states {
            if s.timestamp <= prev || s.timestamp > self.t_b + 1e-9 {
                return Err(BiasError::InvalidRecord(format!(
                    "IMU state at {} outside ({}, {}] or out of order",
                    s.timestamp, self.t_a, self.t_b
                )));
            }
            prev = s.timestamp;
        }
        Ok(())
    }
}

/// Outcome of one bias update; `None` estimates were rejected.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasUpdate {
    pub bias: ImuBias,
    pub gyro_estimate: Option<Vector3<f64>>,
    pub accel_estimate: Option<Vector3<f64>>,
}

/// Residual gyro bias from the attitude gap accumulated over `elapsed` seconds.
///
/// Uses the vector part of `q_visual⁻¹ ⊗ q_imu`, which is `½ b Δt` to first order.
pub fn estimate_gyro_bias(
    q_visual: &Quaternion,
    q_imu: &Quaternion,
    elapsed: f64,
) -> Result<Vector3<f64>, BiasError> {
    if !(elapsed > 0.0) {
        return Err(BiasError::NonPositiveInterval(elapsed));
    }
    let mut delta = q_visual.inverse() * *q_imu;
    if delta.w < 0.0 {
        delta = delta.neg();
    }
    let angle = delta.angle();
    if angle >= MAX_GYRO_DISCREPANCY {
        return Err(BiasError::AttitudeDiscrepancy(angle));
    }
    Ok(2.0 * delta.vec() / elapsed)
}

/// Residual accelerometer bias, in the body frame, from a velocity gap.
pub fn estimate_accel_bias(
    q_visual: &Quaternion,
    v_imu: &Vector3<f64>,
    v_visual: &Vector3<f64>,
    elapsed: f64,
) -> Result<Vector3<f64>, BiasError> {
    if !(elapsed > 0.0) {
        return Err(BiasError::NonPositiveInterval(elapsed));
    }
    let gap = v_imu - v_visual;
    if gap.norm() >= MAX_VELOCITY_DISCREPANCY {
        return Err(BiasError::VelocityDiscrepancy(gap.norm()));
    }
    Ok(q_visual.inverse().rotate(&gap) / elapsed)
}

/// Interpolated state halfway between two frames. Velocity is the chord
/// velocity, attitude the slerp midpoint.
pub fn middle_state(frame_a: &NavState, frame_b: &NavState) -> Result<NavState, BiasError> {
    let dt = frame_b.timestamp - frame_a.timestamp;
    if !(dt > 0.0) {
        return Err(BiasError::NonPositiveInterval(dt));
    }
    Ok(NavState::new(
        slerp(&frame_a.q, &frame_b.q, 0.5),
        0.5 * (frame_a.p + frame_b.p),
        (frame_b.p - frame_a.p) / dt,
        0.5 * (frame_a.timestamp + frame_b.timestamp),
    ))
}

/// Blends the interval's bias estimates into `current`.
///
/// The record's IMU states must have been propagated with `current` as the
/// compensation, so the estimators measure what is left over; the raw
/// estimate is `current + residual` and the output is
/// `smoothing·current + (1−smoothing)·raw`. Rejected or implausible
/// estimates leave the corresponding half of the bias unchanged.
pub fn update_bias(
    record: &InterframeRecord,
    current: &ImuBias,
    smoothing: f64,
    limits: &BiasLimits,
) -> Result<BiasUpdate, BiasError> {
    if record.imu_states.is_empty() {
        return Err(BiasError::EmptyRecord);
    }
    record.validate()?;
    let smoothing = smoothing.clamp(0.0, 1.0);
    let last = record.imu_states.last().expect("non-empty");

    let gyro_estimate = estimate_gyro_bias(
        &record.visual_b.q,
        &last.q,
        last.timestamp - record.t_a,
    )
    .ok()
    .map(|residual| current.gyro_bias + residual)
    .filter(|raw| raw.norm() <= limits.gyro);

    let middle = middle_state(&record.visual_a, &record.visual_b)?;
    let nearest = record
        .imu_states
        .iter()
        .min_by(|a, b| {
            (a.timestamp - middle.timestamp)
                .abs()
                .total_cmp(&(b.timestamp - middle.timestamp).abs())
        })
        .expect("non-empty");
    let accel_estimate = estimate_accel_bias(
        &middle.q,
        &nearest.v,
        &middle.v,
        nearest.timestamp - record.t_a,
    )
    .ok()
    .map(|residual| current.accel_bias + residual)
    .filter(|raw| raw.norm() <= limits.accel);

    let blend = |cur: Vector3<f64>, raw: Option<Vector3<f64>>| match raw {
        Some(raw) => smoothing * cur + (1.0 - smoothing) * raw,
        None => cur,
    };
    Ok(BiasUpdate {
        bias: ImuBias::new(
            blend(current.accel_bias, accel_estimate),
            blend(current.gyro_bias, gyro_estimate),
        ),
        gyro_estimate,
        accel_estimate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::quat_integrate;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn gyro_estimate_zero_for_equal_attitudes() {
        let q = Quaternion::from_axis_angle(&Vector3::new(1.0, 2.0, 3.0), 0.7);
        assert!(estimate_gyro_bias(&q, &q, 0.05).unwrap().norm() < 1e-14);
    }

    #[test]
    fn gyro_estimate_recovers_injected_bias() {
        // same true rotation integrated with and without a constant gyro bias
        let bias = Vector3::new(0.0, 0.0, 0.02);
        let omega = Vector3::new(0.1, -0.2, 0.4);
        let mut q_visual = Quaternion::identity();
        let mut q_imu = Quaternion::identity();
        for _ in 0..10 {
            q_visual = quat_integrate(&q_visual, &omega, 0.005).unwrap();
            q_imu = quat_integrate(&q_imu, &(omega + bias), 0.005).unwrap();
        }
        let est = estimate_gyro_bias(&q_visual, &q_imu, 0.05).unwrap();
        assert!((est - bias).norm() < 0.05 * bias.norm(), "{est:?}");
    }

    #[test]
    fn gyro_estimate_scales_with_inverse_interval() {
        let qv = Quaternion::identity();
        let qi = Quaternion::from_axis_angle(&Vector3::y(), 0.01);
        let a = estimate_gyro_bias(&qv, &qi, 0.1).unwrap();
        let b = estimate_gyro_bias(&qv, &qi, 0.05).unwrap();
        assert_relative_eq!(b.y, 2.0 * a.y, epsilon = 1e-15);
    }

    #[test]
    fn gyro_estimate_rejects_large_gap() {
        let qi = Quaternion::from_axis_angle(&Vector3::y(), 0.5);
        assert!(matches!(
            estimate_gyro_bias(&Quaternion::identity(), &qi, 0.05),
            Err(BiasError::AttitudeDiscrepancy(_))
        ));
        assert!(estimate_gyro_bias(&Quaternion::identity(), &qi, 0.0).is_err());
    }

    #[test]
    fn accel_estimate_values() {
        let q = Quaternion::identity();
        let v = Vector3::new(0.3, 0.2, 0.1);
        assert_eq!(estimate_accel_bias(&q, &v, &v, 0.1).unwrap(), Vector3::zeros());
        let est = estimate_accel_bias(&q, &Vector3::new(0.01, 0.0, 0.0), &Vector3::zeros(), 0.1)
            .unwrap();
        assert_relative_eq!(est.x, 0.1, epsilon = 1e-15);
    }

    #[test]
    fn accel_estimate_rotates_into_body_frame() {
        let q = Quaternion::from_axis_angle(&Vector3::z(), FRAC_PI_2);
        let est = estimate_accel_bias(&q, &Vector3::new(0.01, 0.0, 0.0), &Vector3::zeros(), 0.1)
            .unwrap();
        // R(q)ᵀ built by hand for a quarter turn about z
        let rt = nalgebra::Matrix3::new(0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let oracle = rt * Vector3::new(0.01, 0.0, 0.0) / 0.1;
        assert!((est - oracle).norm() < 1e-15);
        assert!(estimate_accel_bias(&q, &Vector3::new(2.0, 0.0, 0.0), &Vector3::zeros(), 0.1)
            .is_err());
    }

    #[test]
    fn middle_state_values() {
        let a = NavState::at_rest(1.0);
        let mut b = a;
        b.p = Vector3::new(0.1, 0.0, 0.0);
        b.timestamp = 1.05;
        let m = middle_state(&a, &b).unwrap();
        assert_relative_eq!(m.v.x, 2.0, epsilon = 1e-12);
        assert_eq!(m.q, a.q);
        assert_relative_eq!(m.timestamp, 1.025, epsilon = 1e-15);
        assert_relative_eq!(m.p.x, 0.05, epsilon = 1e-15);

        b.q = Quaternion::from_axis_angle(&Vector3::z(), FRAC_PI_2);
        let m = middle_state(&a, &b).unwrap();
        let truth = Quaternion::from_axis_angle(&Vector3::z(), FRAC_PI_2 / 2.0);
        assert!(m.q.angle_to(&truth) < 1e-12);

        assert!(middle_state(&a, &a).is_err());
    }

    fn consistent_record() -> InterframeRecord {
        let a = NavState::new(
            Quaternion::identity(),
            Vector3::zeros(),
            Vector3::new(1.0, 0.0, 0.0),
            0.0,
        );
        let states: Vec<NavState> = (1..=10)
            .map(|k| {
                let t = k as f64 * 0.005;
                NavState::new(a.q, Vector3::new(t, 0.0, 0.0), a.v, t)
            })
            .collect();
        let b = *states.last().unwrap();
        InterframeRecord {
            t_a: 0.0,
            t_b: 0.05,
            visual_a: a,
            visual_b: b,
            imu_states: states,
        }
    }

    #[test]
    fn fixed_point_when_no_residual() {
        let rec = consistent_record();
        let current = ImuBias::new(Vector3::new(0.02, 0.0, 0.0), Vector3::new(0.0, 0.001, 0.0));
        let up = update_bias(&rec, &current, 0.9, &BiasLimits::default()).unwrap();
        assert!((up.bias.accel_bias - current.accel_bias).norm() < 1e-12);
        assert!((up.bias.gyro_bias - current.gyro_bias).norm() < 1e-12);
    }

    #[test]
    fn zero_smoothing_returns_raw_estimate() {
        let mut rec = consistent_record();
        // imu attitude drifted by a small rotation about z
        let drift = Quaternion::from_axis_angle(&Vector3::z(), 0.001);
        for s in rec.imu_states.iter_mut() {
            s.q = s.q * drift;
        }
        let up = update_bias(&rec, &ImuBias::zero(), 0.0, &BiasLimits::default()).unwrap();
        assert_eq!(up.bias.gyro_bias, up.gyro_estimate.unwrap());
        assert_relative_eq!(up.bias.gyro_bias.z, 2.0 * (0.0005f64).sin() / 0.05, epsilon = 1e-12);
    }

    #[test]
    fn empty_record_is_skipped() {
        let mut rec = consistent_record();
        rec.imu_states.clear();
        assert_eq!(
            update_bias(&rec, &ImuBias::zero(), 0.9, &BiasLimits::default()),
            Err(BiasError::EmptyRecord)
        );
    }
}
