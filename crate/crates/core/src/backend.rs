//! Sliding-window bundle adjustment over the most recent keyframes.
//!
//! Poses (`T_w_c0`) and landmarks are refined jointly by Gauss-Newton on
//! Huber-weighted reprojection errors, solved through the landmark Schur
//! complement. The oldest keyframe anchors the gauge. The schedule is two
//! fixed-length stages with gross outliers switched off in between.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use log::{debug, warn};
use nalgebra::{DMatrix, DVector, Matrix3, Matrix6x3, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::CameraRig;
use crate::frontend::{CorrectionMessage, KeyframeMessage};
use crate::geometry::Transform;
use crate::landmark::LandmarkId;
use crate::reprojection::{huber_cost, huber_weight, linearize, predict, CameraIndex};

pub const WINDOW_CAPACITY: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("keyframe {got} is not newer than the window's newest ({newest})")]
    OutOfOrder { newest: u64, got: u64 },
    #[error("window holds {0} keyframes, need at least 2")]
    TooFewKeyframes(usize),
    #[error("window has {0} multi-view landmarks, need at least {1}")]
    TooFewLandmarks(usize, usize),
    #[error("window optimization diverged")]
    Diverged,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    pub capacity: usize,
    pub stage_iterations: usize,
    pub outlier_threshold_px: f64,
    pub huber_delta_px: f64,
    pub initial_damping: f64,
    pub damping_factor: f64,
    pub min_landmarks: usize,
    /// Larger moves of the newest pose are treated as divergence, m.
    pub max_correction: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            capacity: WINDOW_CAPACITY,
            stage_iterations: 10,
            outlier_threshold_px: 3.0,
            huber_delta_px: 1.0,
            initial_damping: 1e-4,
            damping_factor: 10.0,
            min_landmarks: 10,
            max_correction: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowKeyframe {
    pub keyframe_id: u64,
    pub timestamp: f64,
    pub pose: Transform,
    pub fixed: bool,
    /// `(landmark, c0 pixel, c1 pixel)`.
    pub observations: Vec<(LandmarkId, Vector2<f64>, Option<Vector2<f64>>)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReprojectionEdge {
    pub landmark_id: LandmarkId,
    pub keyframe_id: u64,
    pub camera: CameraIndex,
    pub measurement: Vector2<f64>,
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SlidingWindow {
    capacity: usize,
    keyframes: VecDeque<WindowKeyframe>,
    landmarks: BTreeMap<LandmarkId, Vector3<f64>>,
}

impl SlidingWindow {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            keyframes: VecDeque::new(),
            landmarks: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.keyframes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keyframes.is_empty()
    }

    pub fn keyframes(&self) -> impl Iterator<Item = &WindowKeyframe> {
        self.keyframes.iter()
    }

    pub fn keyframe(&self, id: u64) -> Option<&WindowKeyframe> {
        self.keyframes.iter().find(|k| k.keyframe_id == id)
    }

    pub fn newest(&self) -> Option<&WindowKeyframe> {
        self.keyframes.back()
    }

    pub fn landmarks(&self) -> &BTreeMap<LandmarkId, Vector3<f64>> {
        &self.landmarks
    }

    /// Whether keyframe `keyframe_id` observes landmark `landmark_id`.
    pub fn observes(&self, landmark_id: LandmarkId, keyframe_id: u64) -> bool {
        self.keyframe(keyframe_id)
            .is_some_and(|k| k.observations.iter().any(|o| o.0 == landmark_id))
    }

    pub fn observers(&self, landmark_id: LandmarkId) -> Vec<u64> {
        self.keyframes
            .iter()
            .filter(|k| k.observations.iter().any(|o| o.0 == landmark_id))
            .map(|k| k.keyframe_id)
            .collect()
    }

    /// Appends a keyframe, evicting the oldest beyond capacity. Landmark
    /// positions are taken from the newest snapshot. Returns the evicted keyframe.
    pub fn insert(&mut self, msg: &KeyframeMessage) -> Result<Option<WindowKeyframe>, BackendError> {
        if let Some(newest) = self.keyframes.back() {
            if msg.keyframe_id <= newest.keyframe_id {
                return Err(BackendError::OutOfOrder {
                    newest: newest.keyframe_id,
                    got: msg.keyframe_id,
                });
            }
        }
        for entry in &msg.landmarks {
            self.landmarks.insert(entry.landmark_id, entry.position_w);
        }
        self.keyframes.push_back(WindowKeyframe {
            keyframe_id: msg.keyframe_id,
            timestamp: msg.timestamp,
            pose: msg.pose,
            fixed: false,
            observations: msg
                .landmarks
                .iter()
                .map(|e| (e.landmark_id, e.pixel_c0, e.pixel_c1))
                .collect(),
        });
        let evicted = if self.keyframes.len() > self.capacity {
            let old = self.keyframes.pop_front();
            let seen: BTreeSet<LandmarkId> = self
                .keyframes
                .iter()
                .flat_map(|k| k.observations.iter().map(|o| o.0))
                .collect();
            self.landmarks.retain(|id, _| seen.contains(id));
            old
        } else {
            None
        };
        for (i, k) in self.keyframes.iter_mut().enumerate() {
            k.fixed = i == 0;
        }
        Ok(evicted)
    }

    /// All reprojection edges, c0 and c1, initially active.
    pub fn edges(&self) -> Vec<ReprojectionEdge> {
        let mut edges = Vec::new();
        for k in &self.keyframes {
            for &(landmark_id, c0, c1) in &k.observations {
                edges.push(ReprojectionEdge {
                    landmark_id,
                    keyframe_id: k.keyframe_id,
                    camera: CameraIndex::Left,
                    measurement: c0,
                    active: true,
                });
                if let Some(c1) = c1 {
                    edges.push(ReprojectionEdge {
                        landmark_id,
                        keyframe_id: k.keyframe_id,
                        camera: CameraIndex::Right,
                        measurement: c1,
                        active: true,
                    });
                }
            }
        }
        edges
    }

    /// Writes an optimization result back into the window.
    pub fn apply(&mut self, solution: &WindowSolution) {
        for (id, pose) in &solution.poses {
            if let Some(k) = self.keyframes.iter_mut().find(|k| k.keyframe_id == *id) {
                if !k.fixed {
                    k.pose = *pose;
                }
            }
        }
        for (id, p) in &solution.landmarks {
            if let Some(slot) = self.landmarks.get_mut(id) {
                *slot = *p;
            }
        }
    }
}

pub fn window_insert(window: &mut SlidingWindow, msg: &KeyframeMessage) -> Result<Option<WindowKeyframe>, BackendError> {
    window.insert(msg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub stage: usize,
    pub cost: f64,
    pub active_edges: usize,
    pub damping: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSolution {
    pub poses: Vec<(u64, Transform)>,
    pub landmarks: BTreeMap<LandmarkId, Vector3<f64>>,
    pub rejected: Vec<ReprojectionEdge>,
    pub log: Vec<IterationRecord>,
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Root mean square reprojection error over the surviving edges, px.
    pub inlier_rms: f64,
}

struct Problem<'a> {
    rig: &'a CameraRig,
    delta: f64,
    edges: Vec<ReprojectionEdge>,
    edge_pose: Vec<usize>,
    /// Free-pose slot per keyframe.
    pose_slot: Vec<Option<usize>>,
    landmark_ids: Vec<LandmarkId>,
    /// Free-landmark slot per landmark.
    landmark_slot: Vec<Option<usize>>,
    edge_landmark: Vec<usize>,
}

#[derive(Clone)]
struct State {
    poses: Vec<Transform>,
    points: Vec<Vector3<f64>>,
}

impl Problem<'_> {
    fn error(&self, state: &State, e: usize) -> Option<Vector2<f64>> {
        let edge = &self.edges[e];
        predict(
            &state.poses[self.edge_pose[e]],
            &state.points[self.edge_landmark[e]],
            self.rig,
            edge.camera,
        )
        .map(|px| px - edge.measurement)
    }

    fn cost(&self, state: &State) -> f64 {
        let mut total = 0.0;
        for e in 0..self.edges.len() {
            if !self.edges[e].active {
                continue;
            }
            match self.error(state, e) {
                Some(r) => total += huber_cost(r.norm_squared(), self.delta),
                None => return f64::INFINITY,
            }
        }
        total
    }

    fn free_poses(&self) -> usize {
        self.pose_slot.iter().flatten().count()
    }

    fn free_landmarks(&self) -> usize {
        self.landmark_slot.iter().flatten().count()
    }

    /// Gauss-Newton normal equations at `state`, in Schur-ready blocks.
    fn linearize(&self, state: &State) -> Normal {
        let np = self.free_poses();
        let nl = self.free_landmarks();
        let mut hpp = DMatrix::<f64>::zeros(6 * np, 6 * np);
        let mut bp = DVector::<f64>::zeros(6 * np);
        let mut hll = vec![Matrix3::<f64>::zeros(); nl];
        let mut bl = vec![Vector3::<f64>::zeros(); nl];
        let mut hpl: BTreeMap<(usize, usize), Matrix6x3<f64>> = BTreeMap::new();

        for (e, edge) in self.edges.iter().enumerate() {
            if !edge.active {
                continue;
            }
            let pose = &state.poses[self.edge_pose[e]];
            let point = &state.points[self.edge_landmark[e]];
            let Some(lin) = linearize(pose, point, &edge.measurement, self.rig, edge.camera) else {
                continue;
            };
            let w = huber_weight(lin.residual.norm(), self.delta);
            let ps = self.pose_slot[self.edge_pose[e]];
            let ls = self.landmark_slot[self.edge_landmark[e]];
            if let Some(p) = ps {
                let jp = lin.d_pose;
                let mut block = hpp.fixed_view_mut::<6, 6>(6 * p, 6 * p);
                block += w * jp.transpose() * jp;
                let mut g = bp.fixed_rows_mut::<6>(6 * p);
                g += w * jp.transpose() * lin.residual;
            }
            if let Some(l) = ls {
                let jl = lin.d_point;
                hll[l] += w * jl.transpose() * jl;
                bl[l] += w * jl.transpose() * lin.residual;
                if let Some(p) = ps {
                    *hpl.entry((p, l)).or_insert_with(Matrix6x3::zeros) += w * lin.d_pose.transpose() * jl;
                }
            }
        }
        let mut by_landmark: BTreeMap<usize, Vec<(usize, Matrix6x3<f64>)>> = BTreeMap::new();
        for ((p, l), m) in hpl {
            by_landmark.entry(l).or_default().push((p, m));
        }
        Normal {
            hpp,
            bp,
            hll,
            bl,
            by_landmark,
        }
    }

    /// Damped step from `state` via the landmark Schur complement.
    fn step(&self, state: &State, normal: &Normal, damping: f64) -> Option<State> {
        let np = self.free_poses();
        let mut s = normal.hpp.clone();
        for i in 0..6 * np {
            let d = s[(i, i)];
            s[(i, i)] = d + damping * d.max(1e-12);
        }
        let mut hll_inv = Vec::with_capacity(normal.hll.len());
        for h in &normal.hll {
            let mut h = *h;
            for i in 0..3 {
                h[(i, i)] += damping * h[(i, i)].max(1e-12) + 1e-12;
            }
            hll_inv.push(h.try_inverse()?);
        }

        let mut rhs = normal.bp.clone();
        for (l, blocks) in &normal.by_landmark {
            let inv = hll_inv[*l];
            for (p1, w1) in blocks {
                let w1_inv = w1 * inv;
                let mut r = rhs.fixed_rows_mut::<6>(6 * p1);
                r -= w1_inv * normal.bl[*l];
                for (p2, w2) in blocks {
                    let mut block = s.fixed_view_mut::<6, 6>(6 * p1, 6 * p2);
                    block -= w1_inv * w2.transpose();
                }
            }
        }
        let dp = if np > 0 {
            let dp = s.cholesky()?.solve(&(-rhs));
            if dp.iter().any(|v| !v.is_finite()) {
                return None;
            }
            dp
        } else {
            DVector::zeros(0)
        };

        let mut next = state.clone();
        for (k, slot) in self.pose_slot.iter().enumerate() {
            if let Some(p) = slot {
                let d: Vector6<f64> = dp.fixed_rows::<6>(6 * p).into_owned();
                next.poses[k] = state.poses[k].retract(&d);
            }
        }
        for (i, slot) in self.landmark_slot.iter().enumerate() {
            if let Some(l) = slot {
                let mut rhs_l = -normal.bl[*l];
                if let Some(blocks) = normal.by_landmark.get(l) {
                    for (p, w) in blocks {
                        rhs_l -= w.transpose() * dp.fixed_rows::<6>(6 * p);
                    }
                }
                let dl = hll_inv[*l] * rhs_l;
                if !dl.iter().all(|v| v.is_finite()) {
                    return None;
                }
                next.points[i] = state.points[i] + dl;
            }
        }
        Some(next)
    }
}

struct Normal {
    hpp: DMatrix<f64>,
    bp: DVector<f64>,
    hll: Vec<Matrix3<f64>>,
    bl: Vec<Vector3<f64>>,
    /// Pose-landmark coupling blocks grouped by landmark.
    by_landmark: BTreeMap<usize, Vec<(usize, Matrix6x3<f64>)>>,
}

/// Two-stage robust bundle adjustment of the window.
///
/// Runs exactly `2 × stage_iterations` iterations. Between the stages every
/// edge whose reprojection error exceeds the outlier threshold is switched
/// off. A step that would raise the cost is retried with growing damping;
/// if none helps the iteration leaves the state unchanged.
pub fn optimize_window(
    window: &SlidingWindow,
    rig: &CameraRig,
    config: &WindowConfig,
) -> Result<WindowSolution, BackendError> {
    if window.len() < 2 {
        return Err(BackendError::TooFewKeyframes(window.len()));
    }
    let keyframe_index: BTreeMap<u64, usize> = window
        .keyframes
        .iter()
        .enumerate()
        .map(|(i, k)| (k.keyframe_id, i))
        .collect();
    let landmark_ids: Vec<LandmarkId> = window.landmarks.keys().copied().collect();
    let landmark_index: BTreeMap<LandmarkId, usize> =
        landmark_ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();

    let mut observer_count = vec![0usize; landmark_ids.len()];
    for k in &window.keyframes {
        let ids: BTreeSet<LandmarkId> = k.observations.iter().map(|o| o.0).collect();
        for id in ids {
            if let Some(&i) = landmark_index.get(&id) {
                observer_count[i] += 1;
            }
        }
    }
    let mut next_landmark = 0;
    let landmark_slot: Vec<Option<usize>> = observer_count
        .iter()
        .map(|&c| {
            (c >= 2).then(|| {
                next_landmark += 1;
                next_landmark - 1
            })
        })
        .collect();
    if next_landmark < config.min_landmarks {
        return Err(BackendError::TooFewLandmarks(next_landmark, config.min_landmarks));
    }
    let mut next_pose = 0;
    let pose_slot: Vec<Option<usize>> = window
        .keyframes
        .iter()
        .map(|k| {
            (!k.fixed).then(|| {
                next_pose += 1;
                next_pose - 1
            })
        })
        .collect();

    let mut edges = Vec::new();
    let mut edge_pose = Vec::new();
    let mut edge_landmark = Vec::new();
    for edge in window.edges() {
        let Some(&l) = landmark_index.get(&edge.landmark_id) else {
            continue;
        };
        edge_pose.push(keyframe_index[&edge.keyframe_id]);
        edge_landmark.push(l);
        edges.push(edge);
    }
    let mut problem = Problem {
        rig,
        delta: config.huber_delta_px,
        edges,
        edge_pose,
        pose_slot,
        landmark_ids,
        landmark_slot,
        edge_landmark,
    };
    let mut state = State {
        poses: window.keyframes.iter().map(|k| k.pose).collect(),
        points: problem
            .landmark_ids
            .iter()
            .map(|id| window.landmarks[id])
            .collect(),
    };
    // edges that cannot be evaluated at the start never take part
    let mut rejected = Vec::new();
    for e in 0..problem.edges.len() {
        if problem.error(&state, e).is_none() {
            problem.edges[e].active = false;
            rejected.push(problem.edges[e]);
        }
    }

    let initial_cost = problem.cost(&state);
    let mut cost = initial_cost;
    let mut log = Vec::with_capacity(2 * config.stage_iterations);
    let mut damping = 0.0;
    let mut failed_solves = 0;
    for stage in 1..=2 {
        if stage == 2 {
            let threshold = config.outlier_threshold_px;
            for e in 0..problem.edges.len() {
                if problem.edges[e].active
                    && problem.error(&state, e).is_none_or(|r| r.norm() > threshold)
                {
                    problem.edges[e].active = false;
                    rejected.push(problem.edges[e]);
                }
            }
            cost = problem.cost(&state);
            damping = 0.0;
        }
        // steps depend only on state and damping, so once a full damping
        // sweep fails the rest of the stage cannot move either
        let mut stalled = false;
        for _ in 0..config.stage_iterations {
            let normal = (!stalled).then(|| problem.linearize(&state));
            if let Some(n) = &normal {
                // gradient at rounding level: no step can lower the cost
                if n.bp.amax() < 1e-12 && n.bl.iter().all(|g| g.amax() < 1e-12) {
                    stalled = true;
                }
            }
            while let Some(normal) = normal.as_ref().filter(|_| !stalled) {
                match problem.step(&state, normal, damping) {
                    Some(candidate) => {
                        let c = problem.cost(&candidate);
                        if c <= cost {
                            state = candidate;
                            cost = c;
                            damping = if damping > config.initial_damping {
                                damping / config.damping_factor
                            } else {
                                0.0
                            };
                            break;
                        }
                    }
                    None => failed_solves += 1,
                }
                damping = if damping == 0.0 {
                    config.initial_damping
                } else {
                    damping * config.damping_factor
                };
                if damping > 1e8 {
                    damping = config.initial_damping;
                    stalled = true;
                }
            }
            log.push(IterationRecord {
                iteration: log.len() + 1,
                stage,
                cost,
                active_edges: problem.edges.iter().filter(|e| e.active).count(),
                damping,
            });
        }
    }
    debug!(
        "window: cost {initial_cost:.4e} -> {cost:.4e}, {} edges rejected, {failed_solves} failed solves",
        rejected.len()
    );

    let finite = cost.is_finite()
        && state.poses.iter().all(Transform::is_finite)
        && state.points.iter().all(|p| p.iter().all(|v| v.is_finite()));
    let newest_move = (state.poses.last().expect("non-empty").translation
        - window.keyframes.back().expect("non-empty").pose.translation)
        .norm();
    if !finite || newest_move > config.max_correction {
        warn!("window result discarded (newest pose moved {newest_move:.3} m)");
        return Err(BackendError::Diverged);
    }

    let mut sq = 0.0;
    let mut active = 0usize;
    for e in 0..problem.edges.len() {
        if problem.edges[e].active {
            if let Some(r) = problem.error(&state, e) {
                sq += r.norm_squared();
                active += 1;
            }
        }
    }
    Ok(WindowSolution {
        poses: window
            .keyframes
            .iter()
            .zip(&state.poses)
            .map(|(k, p)| (k.keyframe_id, *p))
            .collect(),
        landmarks: problem
            .landmark_ids
            .iter()
            .zip(&state.points)
            .map(|(id, p)| (*id, *p))
            .collect(),
        rejected,
        log,
        initial_cost,
        final_cost: cost,
        inlier_rms: if active > 0 { (sq / active as f64).sqrt() } else { 0.0 },
    })
}

/// Correction moving the newest keyframe from `before` to `after`, plus the
/// refined landmark positions.
pub fn emit_correction(
    sequence: u64,
    reference_keyframe_id: u64,
    before: &Transform,
    after: &Transform,
    landmarks: &BTreeMap<LandmarkId, Vector3<f64>>,
) -> CorrectionMessage {
    CorrectionMessage {
        sequence,
        reference_keyframe_id,
        correction: after * &before.inverse(),
        landmark_updates: landmarks.iter().map(|(id, p)| (*id, *p)).collect(),
        loop_id: None,
    }
}

/// Owns the window and turns keyframes into corrections.
///
/// Every correction the frontend will see passes through here, so the
/// backend knows which ones a late keyframe has not yet absorbed.
#[derive(Debug, Clone)]
pub struct Backend {
    window: SlidingWindow,
    rig: CameraRig,
    config: WindowConfig,
    pub last_solution: Option<WindowSolution>,
    /// Corrections sent towards the frontend, oldest first.
    sent: VecDeque<(u64, Transform)>,
    loop_epoch: u64,
}

impl Backend {
    pub fn new(rig: CameraRig, config: WindowConfig) -> Self {
        Self {
            window: SlidingWindow::new(config.capacity),
            rig,
            config,
            last_solution: None,
            sent: VecDeque::new(),
            loop_epoch: 0,
        }
    }

    pub fn window(&self) -> &SlidingWindow {
        &self.window
    }

    /// Moves the whole window rigidly.
    pub fn apply_correction(&mut self, correction: &Transform) {
        for k in &mut self.window.keyframes {
            k.pose = *correction * k.pose;
        }
        for p in self.window.landmarks.values_mut() {
            *p = correction.transform_point(p);
        }
    }

    /// Takes a loop-closure correction into the window's frame and restamps
    /// it for the frontend.
    pub fn relay(&mut self, msg: &CorrectionMessage, sequence: impl FnOnce() -> u64) -> CorrectionMessage {
        self.apply_correction(&msg.correction);
        if let Some(id) = msg.loop_id {
            self.loop_epoch = self.loop_epoch.max(id);
        }
        let mut out = msg.clone();
        out.sequence = sequence();
        self.sent.push_back((out.sequence, out.correction));
        out
    }

    /// Brings a keyframe emitted before the frontend applied recent
    /// corrections into the current frame.
    fn catch_up(&mut self, msg: &KeyframeMessage) -> KeyframeMessage {
        while self.sent.front().is_some_and(|(s, _)| *s <= msg.applied_sequence) {
            self.sent.pop_front();
        }
        let pending = self
            .sent
            .iter()
            .fold(Transform::identity(), |acc, (_, c)| *c * acc);
        let mut out = msg.clone();
        out.pose = pending * msg.pose;
        for e in &mut out.landmarks {
            e.position_w = pending.transform_point(&e.position_w);
        }
        out.loop_epoch = out.loop_epoch.max(self.loop_epoch);
        out
    }

    /// Inserts a keyframe and optimizes. Returns the refined keyframe (for
    /// the loop-closure archive) and a correction if optimization succeeded.
    pub fn process(
        &mut self,
        msg: &KeyframeMessage,
        sequence: impl FnOnce() -> u64,
    ) -> Result<(KeyframeMessage, Option<CorrectionMessage>), BackendError> {
        let msg = self.catch_up(msg);
        self.window.insert(&msg)?;
        let solution = match optimize_window(&self.window, &self.rig, &self.config) {
            Ok(s) => s,
            Err(BackendError::TooFewKeyframes(_)) | Err(BackendError::TooFewLandmarks(..)) => {
                return Ok((msg, None));
            }
            Err(BackendError::Diverged) => return Ok((msg, None)),
            Err(e) => return Err(e),
        };
        let before = msg.pose;
        self.window.apply(&solution);
        let after = self.window.newest().expect("just inserted").pose;
        let mut refined = msg.clone();
        refined.pose = after;
        for entry in &mut refined.landmarks {
            if let Some(p) = self.window.landmarks.get(&entry.landmark_id) {
                entry.position_w = *p;
            }
        }
        let correction = emit_correction(sequence(), msg.keyframe_id, &before, &after, &solution.landmarks);
        self.sent.push_back((correction.sequence, correction.correction));
        self.last_solution = Some(solution);
        Ok((refined, Some(correction)))
    }
}
