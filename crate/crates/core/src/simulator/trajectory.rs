//! Continuous-time ground-truth motion.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector, Vector3};

use super::{SimulatorError, TrajectoryConfig, TrajectoryKind};
use crate::geometry::{Quaternion, Transform};
use crate::imu::{GRAVITY_MAGNITUDE, NavState};

/// Step used for the attitude central difference, s.
const ATTITUDE_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
    /// Body to world.
    pub attitude: Quaternion,
    /// Body-frame angular velocity.
    pub angular_velocity: Vector3<f64>,
}

impl TrajectoryPoint {
    pub fn pose(&self) -> Transform {
        Transform::new(self.attitude, self.position)
    }

    pub fn nav_state(&self) -> NavState {
        NavState::new(self.attitude, self.position, self.velocity, self.t)
    }
}

#[derive(Debug, Clone)]
enum Path {
    /// `(2R sin θ, R sin 2θ)` with `θ = rate·t`.
    Figure8 { radius: f64, rate: f64 },
    Circle { radius: f64, rate: f64 },
    Line { direction: Vector3<f64>, speed: f64, bob_amplitude: f64, bob_frequency: f64 },
    Static,
    Spline(Box<[CubicSpline; 3]>),
}

/// Twice-differentiable trajectory with heading-following attitude.
#[derive(Debug, Clone)]
pub struct TrajectorySampler {
    path: Path,
    origin: Vector3<f64>,
    fixed_yaw: Option<f64>,
    bank: bool,
    duration: f64,
}

impl TrajectorySampler {
    pub fn new(cfg: &TrajectoryConfig, duration: f64) -> Result<Self, SimulatorError> {
        let origin = Vector3::from(cfg.center);
        let path = match cfg.kind {
            TrajectoryKind::Figure8 => {
                if !(cfg.speed > 0.0) || !(cfg.radius > 0.0) {
                    return Err(SimulatorError::InvalidConfig("figure-8 needs positive speed and radius".into()));
                }
                // constant parameter rate chosen so the path length is speed × duration
                let lap = lemniscate_lap_length(cfg.radius);
                let laps = cfg.speed * duration / lap;
                Path::Figure8 {
                    radius: cfg.radius,
                    rate: TAU * laps / duration,
                }
            }
            TrajectoryKind::Circle => {
                if !(cfg.speed > 0.0) || !(cfg.radius > 0.0) {
                    return Err(SimulatorError::InvalidConfig("circle needs positive speed and radius".into()));
                }
                Path::Circle {
                    radius: cfg.radius,
                    rate: cfg.speed / cfg.radius,
                }
            }
            TrajectoryKind::Line => {
                let direction = Vector3::from(cfg.direction);
                let Some(direction) = direction.try_normalize(1e-12) else {
                    return Err(SimulatorError::InvalidConfig("line direction must be non-zero".into()));
                };
                if !(cfg.speed > 0.0) {
                    return Err(SimulatorError::InvalidConfig("line needs positive speed".into()));
                }
                Path::Line {
                    direction,
                    speed: cfg.speed,
                    bob_amplitude: cfg.bob_amplitude,
                    bob_frequency: cfg.bob_frequency,
                }
            }
            TrajectoryKind::Static => Path::Static,
            TrajectoryKind::Spline => {
                if cfg.waypoints.len() < 2 {
                    return Err(SimulatorError::InvalidConfig("spline needs at least two waypoints".into()));
                }
                let n = cfg.waypoints.len();
                let knots: Vec<f64> = (0..n).map(|i| duration * i as f64 / (n - 1) as f64).collect();
                let axis = |k: usize| {
                    CubicSpline::natural(&knots, &cfg.waypoints.iter().map(|w| w[k]).collect::<Vec<_>>())
                };
                Path::Spline(Box::new([axis(0), axis(1), axis(2)]))
            }
        };
        Ok(Self {
            path,
            origin,
            fixed_yaw: cfg.fixed_yaw,
            bank: cfg.bank,
            duration,
        })
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    /// Position, velocity and acceleration in the world frame.
    pub fn kinematics(&self, t: f64) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        let (p, v, a) = match &self.path {
            Path::Figure8 { radius: r, rate: w } => {
                let th = w * t;
                (
                    Vector3::new(2.0 * r * th.sin(), r * (2.0 * th).sin(), 0.0),
                    Vector3::new(2.0 * r * w * th.cos(), 2.0 * r * w * (2.0 * th).cos(), 0.0),
                    Vector3::new(-2.0 * r * w * w * th.sin(), -4.0 * r * w * w * (2.0 * th).sin(), 0.0),
                )
            }
            Path::Circle { radius: r, rate: w } => {
                let th = w * t;
                (
                    Vector3::new(r * th.cos(), r * th.sin(), 0.0),
                    Vector3::new(-r * w * th.sin(), r * w * th.cos(), 0.0),
                    Vector3::new(-r * w * w * th.cos(), -r * w * w * th.sin(), 0.0),
                )
            }
            Path::Line {
                direction,
                speed,
                bob_amplitude: amp,
                bob_frequency: f,
            } => {
                let om = TAU * f;
                (
                    direction * (*speed * t) + Vector3::new(0.0, 0.0, amp * (om * t).sin()),
                    direction * *speed + Vector3::new(0.0, 0.0, amp * om * (om * t).cos()),
                    Vector3::new(0.0, 0.0, -amp * om * om * (om * t).sin()),
                )
            }
            Path::Static => (Vector3::zeros(), Vector3::zeros(), Vector3::zeros()),
            Path::Spline(axes) => {
                let e: Vec<(f64, f64, f64)> = axes.iter().map(|s| s.eval(t)).collect();
                (
                    Vector3::new(e[0].0, e[1].0, e[2].0),
                    Vector3::new(e[0].1, e[1].1, e[2].1),
                    Vector3::new(e[0].2, e[1].2, e[2].2),
                )
            }
        };
        (p + self.origin, v, a)
    }

    /// Yaw along the horizontal velocity; level unless banking is enabled.
    fn attitude(&self, t: f64) -> Quaternion {
        let (_, v, a) = self.kinematics(t);
        let yaw = match self.fixed_yaw {
            Some(y) => y,
            None if v.xy().norm() > 1e-9 => v.y.atan2(v.x),
            None => self.rest_yaw(),
        };
        let roll = if self.bank && v.xy().norm() > 1e-9 {
            // coordinated turn: lateral acceleration tilts the body
            let heading = v.xy().normalize();
            let lateral = heading.x * a.y - heading.y * a.x;
            (lateral / GRAVITY_MAGNITUDE).atan()
        } else {
            0.0
        };
        Quaternion::from_euler_zyx(roll, 0.0, yaw)
    }

    fn rest_yaw(&self) -> f64 {
        // heading at the start of motion, for trajectories that pause
        let (_, v, _) = self.kinematics(1e-3);
        if v.xy().norm() > 1e-9 {
            v.y.atan2(v.x)
        } else {
            0.0
        }
    }

    pub fn sample(&self, t: f64) -> TrajectoryPoint {
        let (position, velocity, acceleration) = self.kinematics(t);
        let attitude = self.attitude(t);
        let h = ATTITUDE_STEP;
        let before = self.attitude(t - h);
        let after = self.attitude(t + h);
        let angular_velocity = (before.inverse() * after).log() / (2.0 * h);
        TrajectoryPoint {
            t,
            position,
            velocity,
            acceleration,
            attitude,
            angular_velocity,
        }
    }

    /// Path length by trapezoidal quadrature of the speed.
    pub fn length(&self, steps: usize) -> f64 {
        let dt = self.duration / steps as f64;
        let speed = |t: f64| self.kinematics(t).1.norm();
        (0..steps)
            .map(|i| 0.5 * (speed(i as f64 * dt) + speed((i + 1) as f64 * dt)) * dt)
            .sum()
    }
}

/// Length of one lap of `(2R sin θ, R sin 2θ)`.
pub fn lemniscate_lap_length(radius: f64) -> f64 {
    let n = 20_000;
    let h = TAU / n as f64;
    // Simpson's rule on |dp/dθ|
    let f = |th: f64| 2.0 * radius * (th.cos().powi(2) + (2.0 * th).cos().powi(2)).sqrt();
    let mut sum = f(0.0) + f(TAU);
    for i in 1..n {
        sum += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    sum * h / 3.0
}

/// Natural cubic spline `s(t)` through `(knots[i], values[i])`.
#[derive(Debug, Clone)]
pub struct CubicSpline {
    knots: Vec<f64>,
    values: Vec<f64>,
    /// Second derivatives at the knots.
    moments: Vec<f64>,
}

impl CubicSpline {
    pub fn natural(knots: &[f64], values: &[f64]) -> Self {
        let n = knots.len();
        let mut moments = vec![0.0; n];
        if n > 2 {
            let m = n - 2;
            let mut a = DMatrix::<f64>::zeros(m, m);
            let mut b = DVector::<f64>::zeros(m);
            for i in 1..n - 1 {
                let h0 = knots[i] - knots[i - 1];
                let h1 = knots[i + 1] - knots[i];
                let r = i - 1;
                a[(r, r)] = 2.0 * (h0 + h1);
                if r > 0 {
                    a[(r, r - 1)] = h0;
                }
                if r + 1 < m {
                    a[(r, r + 1)] = h1;
                }
                b[r] = 6.0 * ((values[i + 1] - values[i]) / h1 - (values[i] - values[i - 1]) / h0);
            }
            let x = a.lu().solve(&b).expect("diagonally dominant");
            moments[1..n - 1].copy_from_slice(x.as_slice());
        }
        Self {
            knots: knots.to_vec(),
            values: values.to_vec(),
            moments,
        }
    }

    /// Value, first and second derivative.
    pub fn eval(&self, t: f64) -> (f64, f64, f64) {
        let n = self.knots.len();
        let t = t.clamp(self.knots[0], self.knots[n - 1]);
        let i = match self.knots.iter().rposition(|&k| k <= t) {
            Some(i) if i >= n - 1 => n - 2,
            Some(i) => i,
            None => 0,
        };
        let (t0, t1) = (self.knots[i], self.knots[i + 1]);
        let h = t1 - t0;
        let (m0, m1) = (self.moments[i], self.moments[i + 1]);
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let a = t1 - t;
        let b = t - t0;
        let value = m0 * a.powi(3) / (6.0 * h) + m1 * b.powi(3) / (6.0 * h)
            + (y0 / h - m0 * h / 6.0) * a
            + (y1 / h - m1 * h / 6.0) * b;
        let first = -m0 * a * a / (2.0 * h) + m1 * b * b / (2.0 * h) - (y0 / h - m0 * h / 6.0) + (y1 / h - m1 * h / 6.0);
        let second = m0 * a / h + m1 * b / h;
        (value, first, second)
    }
}
