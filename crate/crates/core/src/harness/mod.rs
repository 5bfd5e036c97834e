//! End-to-end runs: simulate, estimate, score, and write artifacts.

mod metrics;
mod pipeline;

pub use metrics::{align, aligned_errors, ate_rmse};
pub use pipeline::{run_pipeline, FrameRecord, PipelineOutput, StageTimings};

use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::WindowConfig;
use crate::frontend::{FrontendConfig, TrackingStatus};
use crate::geometry::{GeometryError, Trajectory, ASSOCIATION_TOLERANCE};
use crate::imu::ImuBias;
use crate::loop_closure::LoopConfig;
use crate::simulator::{generate, MeasurementStream, ScenarioConfig, SimulatorError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Simulator(#[from] SimulatorError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// Process exit code: 2 for bad input, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Simulator(SimulatorError::InvalidConfig(_)) => 2,
            HarnessError::Simulator(SimulatorError::Parse(_)) => 2,
            _ => 1,
        }
    }
}

/// The estimator's switchable loops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Feature {
    Madgwick,
    Feedforward,
    BiasFeedback,
    Iir,
    SlidingWindow,
    LoopClosure,
}

impl Feature {
    pub const ALL: [Feature; 6] = [
        Feature::Madgwick,
        Feature::Feedforward,
        Feature::BiasFeedback,
        Feature::Iir,
        Feature::SlidingWindow,
        Feature::LoopClosure,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::Madgwick => "madgwick",
            Feature::Feedforward => "feedforward",
            Feature::BiasFeedback => "bias-feedback",
            Feature::Iir => "iir",
            Feature::SlidingWindow => "sliding-window",
            Feature::LoopClosure => "loop-closure",
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Feature {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Feature::ALL
            .into_iter()
            .find(|f| f.name() == s || f.name().replace('-', "_") == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown feature '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureSet {
    pub madgwick: bool,
    pub feedforward: bool,
    pub bias_feedback: bool,
    pub iir: bool,
    pub sliding_window: bool,
    pub loop_closure: bool,
}

impl Default for FeatureSet {
    fn default() -> Self {
        Self::all()
    }
}

impl FeatureSet {
    pub fn all() -> Self {
        Self {
            madgwick: true,
            feedforward: true,
            bias_feedback: true,
            iir: true,
            sliding_window: true,
            loop_closure: true,
        }
    }

    pub fn none() -> Self {
        Self {
            madgwick: false,
            feedforward: false,
            bias_feedback: false,
            iir: false,
            sliding_window: false,
            loop_closure: false,
        }
    }

    fn slot(&mut self, f: Feature) -> &mut bool {
        match f {
            Feature::Madgwick => &mut self.madgwick,
            Feature::Feedforward => &mut self.feedforward,
            Feature::BiasFeedback => &mut self.bias_feedback,
            Feature::Iir => &mut self.iir,
            Feature::SlidingWindow => &mut self.sliding_window,
            Feature::LoopClosure => &mut self.loop_closure,
        }
    }

    pub fn get(&self, f: Feature) -> bool {
        *self.clone().slot(f)
    }

    pub fn set(&mut self, f: Feature, on: bool) {
        *self.slot(f) = on;
    }

    pub fn with(mut self, f: Feature, on: bool) -> Self {
        self.set(f, on);
        self
    }

    /// Compact label such as `ff+bias` listing the enabled loops.
    pub fn label(&self) -> String {
        let on: Vec<&str> = Feature::ALL.iter().filter(|f| self.get(**f)).map(|f| f.name()).collect();
        if on.is_empty() {
            "none".into()
        } else if on.len() == Feature::ALL.len() {
            "all".into()
        } else {
            on.join("+")
        }
    }
}

/// Estimator settings. The camera rig always comes from the scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    pub features: FeatureSet,
    pub frontend: FrontendConfig,
    pub window: WindowConfig,
    pub loop_closure: LoopConfig,
    /// Capacity of the keyframe queues between threads.
    pub queue_capacity: usize,
    /// Async replay speed relative to the recording's clock; 0 replays as
    /// fast as the frontend can go.
    pub replay_speed: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            features: FeatureSet::all(),
            frontend: FrontendConfig::default(),
            window: WindowConfig::default(),
            loop_closure: LoopConfig::default(),
            queue_capacity: 16,
            replay_speed: 2.0,
        }
    }
}

impl EstimatorConfig {
    /// Frontend settings with the feature switches applied.
    pub fn frontend_config(&self) -> FrontendConfig {
        let mut f = self.frontend;
        f.enable_madgwick = self.features.madgwick;
        f.enable_feedforward = self.features.feedforward;
        f.enable_bias_feedback = self.features.bias_feedback;
        f.enable_iir = self.features.iir;
        f
    }
}

/// A scenario file: simulator settings at top level, estimator under `[estimator]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    #[serde(flatten)]
    pub scenario: ScenarioConfig,
    pub estimator: EstimatorConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.scenario.validate()?;
        if self.estimator.queue_capacity == 0 {
            return Err(HarnessError::Config("queue capacity must be positive".into()));
        }
        if !(self.estimator.replay_speed >= 0.0) {
            return Err(HarnessError::Config("replay speed must be non-negative".into()));
        }
        if self.estimator.window.capacity < 2 {
            return Err(HarnessError::Config("window needs at least two keyframes".into()));
        }
        Ok(())
    }

    /// Same scenario with a different seed for both simulation and RANSAC.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.scenario.seed = seed;
        self.estimator.frontend.seed = seed;
        self
    }

    pub fn with_features(mut self, features: FeatureSet) -> Self {
        self.estimator.features = features;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Frontend, window and loop closure on separate threads.
    Async,
    /// Everything inline on one thread; bit-for-bit reproducible.
    Sync,
}

/// Scores and summary statistics of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub mode: Mode,
    pub features: FeatureSet,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub frames: usize,
    pub keyframes: usize,
    pub ate_rmse: f64,
    pub trajectory_length: f64,
    /// ATE as a fraction of the ground-truth path length.
    pub ate_ratio: f64,
    pub visual_frames: usize,
    pub low_confidence_frames: usize,
    pub imu_only_frames: usize,
    pub mean_inliers: f64,
    pub min_inliers: usize,
    pub mean_reprojection_rms: f64,
    pub final_gyro_bias: [f64; 3],
    pub final_accel_bias: [f64; 3],
    pub true_gyro_bias: [f64; 3],
    pub true_accel_bias: [f64; 3],
    pub window_optimizations: usize,
    pub corrections_applied: usize,
    pub loop_candidates: usize,
    pub loop_closures: usize,
    pub loop_rejections: usize,
    /// Aligned position error per frame, m.
    pub frame_errors: Vec<f64>,
    #[serde(skip)]
    pub bias_trace: Vec<(f64, ImuBias)>,
    #[serde(skip)]
    pub timings: StageTimings,
}

impl RunReport {
    pub fn succeeded(&self) -> bool {
        self.failure.is_none()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("report is plain data")
    }

    pub fn bias_csv(&self) -> String {
        let mut out = String::from("timestamp,bgx,bgy,bgz,bax,bay,baz\n");
        for (t, b) in &self.bias_trace {
            let (g, a) = (b.gyro_bias, b.accel_bias);
            let _ = writeln!(out, "{t:.6},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9}", g.x, g.y, g.z, a.x, a.y, a.z);
        }
        out
    }
}

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub estimate: Trajectory,
    pub ground_truth: Trajectory,
    pub pipeline: PipelineOutput,
}

fn arr(v: nalgebra::Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

pub fn score(cfg: &RunConfig, mode: Mode, stream: &MeasurementStream, pipeline: PipelineOutput) -> RunOutcome {
    let estimate = pipeline.estimate();
    let ground_truth = stream.ground_truth.clone();
    let errors = aligned_errors(&estimate, &ground_truth, ASSOCIATION_TOLERANCE).unwrap_or_default();
    let ate = if errors.is_empty() {
        f64::NAN
    } else {
        (errors.iter().map(|(_, e)| e * e).sum::<f64>() / errors.len() as f64).sqrt()
    };
    let length = ground_truth.length();
    let frames = &pipeline.frames;
    let count = |s: TrackingStatus| frames.iter().filter(|f| f.status == s).count();
    let tracked: Vec<&FrameRecord> = frames.iter().filter(|f| f.status != TrackingStatus::ImuOnly).skip(1).collect();
    let mean = |xs: &mut dyn Iterator<Item = f64>| {
        let v: Vec<f64> = xs.collect();
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let final_bias = frames.last().map(|f| f.bias).unwrap_or_default();
    let true_bias = stream.bias_trace.last().map(|b| b.1).unwrap_or_default();
    let report = RunReport {
        scenario: cfg.scenario.name.clone(),
        seed: cfg.scenario.seed,
        mode,
        features: cfg.estimator.features,
        failure: pipeline.failure.clone(),
        frames: frames.len(),
        keyframes: pipeline.keyframes,
        ate_rmse: ate,
        trajectory_length: length,
        ate_ratio: if length > 0.0 { ate / length } else { f64::NAN },
        visual_frames: count(TrackingStatus::Visual),
        low_confidence_frames: count(TrackingStatus::LowConfidence),
        imu_only_frames: count(TrackingStatus::ImuOnly),
        mean_inliers: mean(&mut tracked.iter().map(|f| f.inliers as f64)),
        min_inliers: tracked.iter().map(|f| f.inliers).min().unwrap_or(0),
        mean_reprojection_rms: mean(&mut tracked.iter().map(|f| f.reprojection_rms)),
        final_gyro_bias: arr(final_bias.gyro_bias),
        final_accel_bias: arr(final_bias.accel_bias),
        true_gyro_bias: arr(true_bias.gyro_bias),
        true_accel_bias: arr(true_bias.accel_bias),
        window_optimizations: pipeline.window_log.iter().map(|(k, _)| *k).collect::<std::collections::BTreeSet<_>>().len(),
        corrections_applied: pipeline.corrections_applied,
        loop_candidates: pipeline.loop_stats.candidates,
        loop_closures: pipeline.loop_stats.accepted,
        loop_rejections: pipeline.loop_stats.rejected,
        frame_errors: errors.iter().map(|(_, e)| *e).collect(),
        bias_trace: frames.iter().map(|f| (f.timestamp, f.bias)).collect(),
        timings: pipeline.timings,
    };
    RunOutcome {
        report,
        estimate,
        ground_truth,
        pipeline,
    }
}

/// Simulates the scenario, runs the estimator and scores it.
pub fn run_scenario(cfg: &RunConfig, mode: Mode) -> Result<RunOutcome, HarnessError> {
    cfg.validate()?;
    let stream = generate(&cfg.scenario)?;
    let pipeline = run_pipeline(&stream, cfg, mode);
    Ok(score(cfg, mode, &stream, pipeline))
}

/// Runs every on/off combination of `varied`, all other loops on.
pub fn ablation_matrix(cfg: &RunConfig, varied: &[Feature], mode: Mode) -> Result<Vec<RunReport>, HarnessError> {
    cfg.validate()?;
    let stream = generate(&cfg.scenario)?;
    let mut reports = Vec::with_capacity(1 << varied.len());
    for mask in 0..(1usize << varied.len()) {
        let mut features = cfg.estimator.features;
        for (i, f) in varied.iter().enumerate() {
            features.set(*f, mask & (1 << i) == 0);
        }
        let run_cfg = cfg.clone().with_features(features);
        let pipeline = run_pipeline(&stream, &run_cfg, mode);
        reports.push(score(&run_cfg, mode, &stream, pipeline).report);
    }
    Ok(reports)
}

/// Plain-text comparison table of ablation runs.
pub fn ablation_table(reports: &[RunReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<60} {:>10} {:>8} {:>8} {:>6} {:>8}",
        "enabled loops", "ATE [m]", "ATE/len", "imu-only", "loops", "status"
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{:<60} {:>10.4} {:>7.2}% {:>8} {:>6} {:>8}",
            r.features.label(),
            r.ate_rmse,
            100.0 * r.ate_ratio,
            r.imu_only_frames,
            r.loop_closures,
            if r.succeeded() { "ok" } else { "failed" }
        );
    }
    out
}

pub fn ablation_csv(reports: &[RunReport]) -> String {
    let mut out = String::from("madgwick,feedforward,bias_feedback,iir,sliding_window,loop_closure,ate_rmse,ate_ratio,imu_only_frames,loop_closures,failed\n");
    for r in reports {
        let f = r.features;
        let b = |x: bool| x as u8;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{:.6},{:.6},{},{},{}",
            b(f.madgwick),
            b(f.feedforward),
            b(f.bias_feedback),
            b(f.iir),
            b(f.sliding_window),
            b(f.loop_closure),
            r.ate_rmse,
            r.ate_ratio,
            r.imu_only_frames,
            r.loop_closures,
            b(!r.succeeded())
        );
    }
    out
}

fn frames_csv(outcome: &RunOutcome) -> String {
    let errors: std::collections::HashMap<u64, f64> = outcome
        .pipeline
        .frames
        .iter()
        .zip(&outcome.report.frame_errors)
        .map(|(f, e)| (f.frame_id, *e))
        .collect();
    let mut out = String::from("frame_id,timestamp,status,correspondences,inliers,reprojection_rms,error\n");
    for f in &outcome.pipeline.frames {
        let status = match f.status {
            TrackingStatus::Visual => "visual",
            TrackingStatus::LowConfidence => "low-confidence",
            TrackingStatus::ImuOnly => "imu-only",
        };
        let _ = writeln!(
            out,
            "{},{:.6},{},{},{},{:.6},{:.6}",
            f.frame_id,
            f.timestamp,
            status,
            f.correspondences,
            f.inliers,
            f.reprojection_rms,
            errors.get(&f.frame_id).copied().unwrap_or(f64::NAN)
        );
    }
    out
}

fn window_csv(outcome: &RunOutcome) -> String {
    let mut out = String::from("keyframe_id,iteration,stage,cost,active_edges,damping\n");
    for (k, r) in &outcome.pipeline.window_log {
        let _ = writeln!(
            out,
            "{k},{},{},{:.9e},{},{:.3e}",
            r.iteration, r.stage, r.cost, r.active_edges, r.damping
        );
    }
    out
}

/// Writes trajectories, report and diagnostics into `dir`.
///
/// `report.toml` holds only deterministic content; wall-clock timings go to
/// `timing.toml`.
pub fn write_outputs(outcome: &RunOutcome, dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    outcome.estimate.write_tum(&dir.join("estimate.tum"))?;
    outcome.ground_truth.write_tum(&dir.join("groundtruth.tum"))?;
    fs::write(dir.join("report.toml"), outcome.report.to_toml())?;
    fs::write(dir.join("timing.toml"), outcome.report.timings.to_toml())?;
    fs::write(dir.join("frames.csv"), frames_csv(outcome))?;
    fs::write(dir.join("bias.csv"), outcome.report.bias_csv())?;
    fs::write(dir.join("window.csv"), window_csv(outcome))?;
    fs::write(dir.join("landmarks.csv"), &outcome.pipeline.map_csv)?;
    if let Some(s) = &outcome.pipeline.similarity_csv {
        fs::write(dir.join("similarity.csv"), s)?;
    }
    Ok(())
}

/// ATE between two TUM files.
pub fn evaluate_files(estimate: &Path, ground_truth: &Path) -> Result<f64, HarnessError> {
    let est = Trajectory::read_tum(estimate)?;
    let gt = Trajectory::read_tum(ground_truth)?;
    Ok(ate_rmse(&est, &gt, ASSOCIATION_TOLERANCE)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_names_round_trip() {
        for f in Feature::ALL {
            assert_eq!(f.name().parse::<Feature>().unwrap(), f);
        }
        assert!("warp-drive".parse::<Feature>().is_err());
        assert_eq!(FeatureSet::all().label(), "all");
        assert_eq!(FeatureSet::none().label(), "none");
        assert_eq!(FeatureSet::none().with(Feature::Iir, true).label(), "iir");
    }

    #[test]
    fn config_parses_with_estimator_section() {
        let cfg = RunConfig::from_toml_str(
            "name = \"t\"\nseed = 4\nduration = 5.0\n[trajectory]\nkind = \"circle\"\nradius = 2.0\n\
             [estimator.features]\nloop_closure = false\n[estimator.window]\ncapacity = 5\n",
        )
        .unwrap();
        assert_eq!(cfg.scenario.seed, 4);
        assert_eq!(cfg.scenario.trajectory.radius, 2.0);
        assert!(!cfg.estimator.features.loop_closure);
        assert!(cfg.estimator.features.madgwick);
        assert_eq!(cfg.estimator.window.capacity, 5);
    }

    #[test]
    fn bad_config_is_exit_code_two() {
        let err = RunConfig::from_toml_str("duration = -1.0").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let err = RunConfig::from_toml_str("duration = ").unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
