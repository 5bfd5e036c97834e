//! Deterministic synthetic world: trajectory, IMU stream and stereo
//! observations of a fixed landmark field, all derived from one seed.

mod trajectory;

pub use trajectory::{lemniscate_lap_length, CubicSpline, TrajectoryPoint, TrajectorySampler};

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::CameraRig;
use crate::frontend::FrameInput;
use crate::geometry::{Trajectory, Transform};
use crate::imu::{gravity, ImuBias, ImuSample, NavState};
use crate::landmark::StereoObservation;

#[derive(Debug, Error)]
pub enum SimulatorError {
    #[error("invalid scenario: {0}")]
    InvalidConfig(String),
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] toml::de::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryKind {
    #[default]
    Figure8,
    Circle,
    Line,
    Static,
    Spline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectoryConfig {
    pub kind: TrajectoryKind,
    /// Lobe radius for the figure-8, circle radius otherwise, m.
    pub radius: f64,
    /// Mean speed, m/s.
    pub speed: f64,
    pub center: [f64; 3],
    pub direction: [f64; 3],
    /// Vertical oscillation on line trajectories, m and Hz.
    pub bob_amplitude: f64,
    pub bob_frequency: f64,
    pub waypoints: Vec<[f64; 3]>,
    pub fixed_yaw: Option<f64>,
    /// Roll into turns instead of staying level.
    pub bank: bool,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            kind: TrajectoryKind::Figure8,
            radius: 1.0,
            speed: 1.0,
            center: [0.0, 0.0, 1.0],
            direction: [1.0, 0.0, 0.0],
            bob_amplitude: 0.1,
            bob_frequency: 0.2,
            waypoints: Vec::new(),
            fixed_yaw: None,
            bank: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImuNoiseConfig {
    /// Continuous-time white noise densities, rad/s/√Hz and m/s²/√Hz.
    pub gyro_noise_density: f64,
    pub accel_noise_density: f64,
    pub gyro_bias: [f64; 3],
    pub accel_bias: [f64; 3],
    /// Bias random-walk densities, per √s.
    pub gyro_random_walk: f64,
    pub accel_random_walk: f64,
}

impl Default for ImuNoiseConfig {
    fn default() -> Self {
        Self {
            gyro_noise_density: 1.7e-4,
            accel_noise_density: 2.0e-3,
            gyro_bias: [0.0; 3],
            accel_bias: [0.0; 3],
            gyro_random_walk: 0.0,
            accel_random_walk: 0.0,
        }
    }
}

impl ImuNoiseConfig {
    pub fn noise_free() -> Self {
        Self {
            gyro_noise_density: 0.0,
            accel_noise_density: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraConfig {
    pub pixel_noise: f64,
    /// Probability of losing the c1 match of a near landmark.
    pub dropout_probability: f64,
    /// Disparity above which a landmark counts as near, px.
    pub dropout_disparity: f64,
    pub min_depth: f64,
    pub max_depth: f64,
    /// Intervals `[start, end]` (s) with no observations at all.
    pub blackouts: Vec<[f64; 2]>,
    pub rig: CameraRig,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            pixel_noise: 0.5,
            dropout_probability: 0.5,
            dropout_disparity: 40.0,
            min_depth: 0.2,
            max_depth: 50.0,
            blackouts: Vec::new(),
            rig: CameraRig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LandmarkConfig {
    pub count: usize,
    /// Full size of the outer box, m.
    pub outer_size: [f64; 3],
    /// Half-extent of the empty core in x and y, m.
    pub inner_half_extent: f64,
    /// Box centre; the trajectory centre when absent.
    pub center: Option<[f64; 3]>,
}

impl Default for LandmarkConfig {
    fn default() -> Self {
        Self {
            count: 800,
            outer_size: [10.0, 10.0, 4.0],
            inner_half_extent: 3.0,
            center: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub duration: f64,
    pub imu_rate: f64,
    pub camera_rate: f64,
    pub trajectory: TrajectoryConfig,
    pub imu: ImuNoiseConfig,
    pub camera: CameraConfig,
    pub landmarks: LandmarkConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "figure8".into(),
            seed: 1,
            duration: 31.0,
            imu_rate: 200.0,
            camera_rate: 20.0,
            trajectory: TrajectoryConfig::default(),
            imu: ImuNoiseConfig::default(),
            camera: CameraConfig::default(),
            landmarks: LandmarkConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, SimulatorError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, SimulatorError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), SimulatorError> {
        let bad = |m: &str| Err(SimulatorError::InvalidConfig(m.into()));
        if !(self.imu_rate > 0.0 && self.camera_rate > 0.0) {
            return bad("rates must be positive");
        }
        if self.imu_rate < self.camera_rate {
            return bad("IMU rate must be at least the camera rate");
        }
        if !(self.duration > 0.0) {
            return bad("duration must be positive");
        }
        if !(0.0..=1.0).contains(&self.camera.dropout_probability) {
            return bad("dropout probability must lie in [0, 1]");
        }
        if self.camera.pixel_noise < 0.0 || self.imu.gyro_noise_density < 0.0 || self.imu.accel_noise_density < 0.0 {
            return bad("noise levels must be non-negative");
        }
        self.camera
            .rig
            .validate()
            .map_err(|e| SimulatorError::InvalidConfig(e.to_string()))?;
        TrajectorySampler::new(&self.trajectory, self.duration)?;
        Ok(())
    }
}

/// Everything the estimator consumes, plus the truth it is scored against.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementStream {
    pub imu: Vec<ImuSample>,
    pub frames: Vec<FrameInput>,
    /// Body pose per camera frame.
    pub ground_truth: Trajectory,
    /// True body state per camera frame.
    pub states: Vec<NavState>,
    /// True bias per camera frame.
    pub bias_trace: Vec<(f64, ImuBias)>,
    pub landmarks: Vec<Vector3<f64>>,
}

// independent random streams derived from the scenario seed
const STREAM_LANDMARKS: u64 = 0;
const STREAM_IMU: u64 = 1;
const STREAM_CAMERA: u64 = 2;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gaussian3<R: Rng>(rng: &mut R, sigma: f64) -> Vector3<f64> {
    let mut n = || -> f64 { StandardNormal.sample(rng) };
    Vector3::new(n(), n(), n()) * sigma
}

fn gaussian2<R: Rng>(rng: &mut R, sigma: f64) -> Vector2<f64> {
    let mut n = || -> f64 { StandardNormal.sample(rng) };
    Vector2::new(n(), n()) * sigma
}

/// Landmarks uniform in a box shell: inside the outer box, outside the
/// vertical core column of the given half-extent.
pub fn generate_landmarks(cfg: &LandmarkConfig, center: Vector3<f64>, seed: u64) -> Vec<Vector3<f64>> {
    let mut rng = stream_rng(seed, STREAM_LANDMARKS);
    let half = Vector3::from(cfg.outer_size) / 2.0;
    let mut out = Vec::with_capacity(cfg.count);
    while out.len() < cfg.count {
        let p = Vector3::new(
            rng.random_range(-half.x..=half.x),
            rng.random_range(-half.y..=half.y),
            rng.random_range(-half.z..=half.z),
        );
        if p.x.abs() < cfg.inner_half_extent && p.y.abs() < cfg.inner_half_extent {
            continue;
        }
        out.push(center + p);
    }
    out
}

/// Ideal-plus-noise IMU samples at `imu_rate` over the scenario.
pub fn synthesize_imu(sampler: &TrajectorySampler, cfg: &ScenarioConfig) -> (Vec<ImuSample>, Vec<(f64, ImuBias)>) {
    let mut rng = stream_rng(cfg.seed, STREAM_IMU);
    let dt = 1.0 / cfg.imu_rate;
    let n = (cfg.duration * cfg.imu_rate + 1e-9).floor() as usize;
    let gyro_sigma = cfg.imu.gyro_noise_density * cfg.imu_rate.sqrt();
    let accel_sigma = cfg.imu.accel_noise_density * cfg.imu_rate.sqrt();
    let mut bias = ImuBias::new(Vector3::from(cfg.imu.accel_bias), Vector3::from(cfg.imu.gyro_bias));
    let mut samples = Vec::with_capacity(n + 1);
    let mut trace = Vec::with_capacity(n + 1);
    for k in 0..=n {
        // divided, not multiplied, so it matches frame times bit for bit
        let t = k as f64 / cfg.imu_rate;
        if k > 0 {
            bias.gyro_bias += gaussian3(&mut rng, cfg.imu.gyro_random_walk * dt.sqrt());
            bias.accel_bias += gaussian3(&mut rng, cfg.imu.accel_random_walk * dt.sqrt());
        }
        let truth = sampler.sample(t);
        let specific_force = truth.attitude.inverse().rotate(&(truth.acceleration + gravity()));
        let gyro = truth.angular_velocity + bias.gyro_bias + gaussian3(&mut rng, gyro_sigma);
        let accel = specific_force + bias.accel_bias + gaussian3(&mut rng, accel_sigma);
        samples.push(ImuSample::new(t, accel, gyro));
        trace.push((t, bias));
    }
    (samples, trace)
}

/// Stereo observations of `landmarks` from body pose `body`.
///
/// Keeps landmarks inside both image frusta within the depth band, adds
/// pixel noise, and drops the c1 pixel of near landmarks with the configured
/// probability.
pub fn observe_frame<R: Rng>(
    frame_id: u64,
    body: &Transform,
    landmarks: &[Vector3<f64>],
    cfg: &CameraConfig,
    rng: &mut R,
) -> Vec<StereoObservation> {
    let rig = &cfg.rig;
    let pose_c0 = rig.camera_pose(body);
    let mut out = Vec::new();
    for (id, x) in landmarks.iter().enumerate() {
        let p_c0 = pose_c0.inverse_transform_point(x);
        if !(p_c0.z > cfg.min_depth && p_c0.z < cfg.max_depth) {
            continue;
        }
        let p_c1 = rig.t_c1_c0.transform_point(&p_c0);
        if p_c1.z <= cfg.min_depth {
            continue;
        }
        let (Some(u0), Some(u1)) = (rig.project_c0(&p_c0), rig.project_c1(&p_c0)) else {
            continue;
        };
        if !rig.cam0.in_bounds(&u0) || !rig.cam1.in_bounds(&u1) {
            continue;
        }
        let disparity = u0.x - u1.x;
        let u0 = u0 + gaussian2(rng, cfg.pixel_noise);
        let u1 = u1 + gaussian2(rng, cfg.pixel_noise);
        let dropped = disparity > cfg.dropout_disparity && rng.random::<f64>() < cfg.dropout_probability;
        if !rig.cam0.in_bounds(&u0) {
            continue;
        }
        let pixel_c1 = (!dropped && rig.cam1.in_bounds(&u1)).then_some(u1);
        out.push(StereoObservation {
            landmark_id: id as u64,
            pixel_c0: u0,
            pixel_c1,
            frame_id,
        });
    }
    out
}

/// Generates the full measurement stream for a scenario.
pub fn generate(cfg: &ScenarioConfig) -> Result<MeasurementStream, SimulatorError> {
    cfg.validate()?;
    let sampler = TrajectorySampler::new(&cfg.trajectory, cfg.duration)?;
    let center = cfg
        .landmarks
        .center
        .map(Vector3::from)
        .unwrap_or_else(|| Vector3::from(cfg.trajectory.center) + line_midpoint(cfg));
    let landmarks = generate_landmarks(&cfg.landmarks, center, cfg.seed);
    let (imu, full_trace) = synthesize_imu(&sampler, cfg);

    let mut rng = stream_rng(cfg.seed, STREAM_CAMERA);
    let frame_count = (cfg.duration * cfg.camera_rate + 1e-9).floor() as usize;
    let mut frames = Vec::with_capacity(frame_count + 1);
    let mut gt = Vec::with_capacity(frame_count + 1);
    let mut states = Vec::with_capacity(frame_count + 1);
    let mut bias_trace = Vec::with_capacity(frame_count + 1);
    for j in 0..=frame_count {
        let t = j as f64 / cfg.camera_rate;
        let truth = sampler.sample(t);
        let body = truth.pose();
        let blacked_out = cfg.camera.blackouts.iter().any(|b| t >= b[0] && t <= b[1]);
        let observations = if blacked_out {
            Vec::new()
        } else {
            observe_frame(j as u64, &body, &landmarks, &cfg.camera, &mut rng)
        };
        frames.push(FrameInput {
            frame_id: j as u64,
            timestamp: t,
            observations,
        });
        gt.push((t, body));
        states.push(truth.nav_state());
        let k = ((t * cfg.imu_rate).round() as usize).min(full_trace.len() - 1);
        bias_trace.push((t, full_trace[k].1));
    }
    let ground_truth = Trajectory::from_poses(gt).map_err(|e| SimulatorError::InvalidConfig(e.to_string()))?;
    Ok(MeasurementStream {
        imu,
        frames,
        ground_truth,
        states,
        bias_trace,
        landmarks,
    })
}

/// Offset of a line trajectory's midpoint from its start, zero otherwise.
fn line_midpoint(cfg: &ScenarioConfig) -> Vector3<f64> {
    match cfg.trajectory.kind {
        TrajectoryKind::Line => {
            let d = Vector3::from(cfg.trajectory.direction).try_normalize(1e-12).unwrap_or_default();
            d * cfg.trajectory.speed * cfg.duration / 2.0
        }
        _ => Vector3::zeros(),
    }
}

impl MeasurementStream {
    /// IMU samples stamped in `(from, to]`.
    pub fn imu_between(&self, from: f64, to: f64) -> &[ImuSample] {
        let start = self.imu.partition_point(|s| s.timestamp <= from);
        let end = self.imu.partition_point(|s| s.timestamp <= to);
        &self.imu[start..end]
    }

    pub fn imu_csv(&self) -> String {
        let mut out = String::from("timestamp,ax,ay,az,gx,gy,gz\n");
        for s in &self.imu {
            let _ = writeln!(
                out,
                "{:.6},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9}",
                s.timestamp, s.accel.x, s.accel.y, s.accel.z, s.gyro.x, s.gyro.y, s.gyro.z
            );
        }
        out
    }

    pub fn observations_csv(&self) -> String {
        let mut out = String::from("frame_id,landmark_id,u0,v0,u1,v1\n");
        for f in &self.frames {
            for o in &f.observations {
                let (u1, v1) = o.pixel_c1.map_or((f64::NAN, f64::NAN), |p| (p.x, p.y));
                let _ = writeln!(
                    out,
                    "{},{},{:.6},{:.6},{:.6},{:.6}",
                    f.frame_id, o.landmark_id, o.pixel_c0.x, o.pixel_c0.y, u1, v1
                );
            }
        }
        out
    }
}
