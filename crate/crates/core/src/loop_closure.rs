//! Place recognition and pose-graph correction.
//!
//! Places are described by the set of landmark ids a keyframe observes; the
//! simulator keeps ids stable across revisits, so overlap of these sets plays
//! the role a visual vocabulary would. Accepted loops add a relative-pose
//! constraint and the whole keyframe chain is re-optimized.

use std::collections::{BTreeMap, BTreeSet};

use log::{debug, info};
use nalgebra::{Matrix6, Vector2, Vector3, Vector6};
use sprs::{CsMat, FillInReduction, SymmetryCheck, TriMat};
use sprs_ldl::Ldl;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::CameraRig;
use crate::frontend::{ransac_pnp, CorrectionMessage, KeyframeMessage, RansacConfig};
use crate::geometry::{right_jacobian_inv, skew, Transform};
use crate::landmark::LandmarkId;
use crate::reprojection::huber_cost;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LoopError {
    #[error("pose graph has no loop edge")]
    NoLoopEdge,
    #[error("pose graph edge references missing vertex {0}")]
    MissingVertex(usize),
    #[error("adjacent edges do not form a single chain")]
    BrokenChain,
    #[error("pose graph optimization diverged")]
    Diverged,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    /// Most recent keyframes never considered as loop candidates.
    pub temporal_guard: usize,
    pub min_score: f64,
    pub min_neighbor_score: f64,
    pub neighbors: usize,
    pub max_translation: f64,
    pub max_rotation: f64,
    pub min_inliers: usize,
    /// Huber threshold on loop-edge residual norms (mixed rad / m).
    pub loop_huber_delta: f64,
    pub max_iterations: usize,
    pub relative_tolerance: f64,
    pub ransac: RansacConfig,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            temporal_guard: 20,
            min_score: 0.2,
            min_neighbor_score: 0.15,
            neighbors: 3,
            max_translation: 3.0,
            max_rotation: 60f64.to_radians(),
            min_inliers: 30,
            loop_huber_delta: 0.5,
            max_iterations: 50,
            relative_tolerance: 1e-9,
            ransac: RansacConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlaceSignature {
    pub keyframe_id: u64,
    pub landmarks: BTreeSet<LandmarkId>,
}

impl PlaceSignature {
    pub fn new(keyframe_id: u64, landmarks: impl IntoIterator<Item = LandmarkId>) -> Self {
        Self {
            keyframe_id,
            landmarks: landmarks.into_iter().collect(),
        }
    }
}

/// `|a ∩ b| / max(|a|, |b|)`; zero if either is empty.
pub fn similarity(a: &PlaceSignature, b: &PlaceSignature) -> f64 {
    let larger = a.landmarks.len().max(b.landmarks.len());
    if a.landmarks.is_empty() || b.landmarks.is_empty() {
        return 0.0;
    }
    a.landmarks.intersection(&b.landmarks).count() as f64 / larger as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopCandidate {
    /// Position in the history slice.
    pub index: usize,
    pub keyframe_id: u64,
    pub score: f64,
}

/// Candidate selection from scores against the eligible history, oldest
/// first: the best score must exceed `min_score` and the `neighbors`
/// entries right before it must each exceed `min_neighbor_score`.
pub fn select_candidate(scores: &[f64], config: &LoopConfig) -> Option<usize> {
    let (best, &score) = scores
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))?;
    if !(score > config.min_score) || best < config.neighbors {
        return None;
    }
    scores[best - config.neighbors..best]
        .iter()
        .all(|&s| s > config.min_neighbor_score)
        .then_some(best)
}

/// Searches `history` (all earlier keyframes, oldest first) for a revisit of
/// `query`, ignoring the most recent `temporal_guard` entries.
pub fn detect_loop(query: &PlaceSignature, history: &[PlaceSignature], config: &LoopConfig) -> Option<LoopCandidate> {
    if history.len() < config.temporal_guard + config.neighbors + 1 {
        return None;
    }
    let eligible = &history[..history.len() - config.temporal_guard];
    let scores: Vec<f64> = eligible.iter().map(|s| similarity(query, s)).collect();
    let index = select_candidate(&scores, config)?;
    Some(LoopCandidate {
        index,
        keyframe_id: eligible[index].keyframe_id,
        score: scores[index],
    })
}

/// True when some keyframe between the candidate and the query (history
/// index `candidate` onwards) had lost sight of the candidate's place. A
/// place that stayed in view the whole time is covisibility, not a revisit.
pub fn place_was_left(candidate: usize, history: &[PlaceSignature], config: &LoopConfig) -> bool {
    let place = &history[candidate];
    history[candidate + 1..]
        .iter()
        .any(|s| similarity(place, s) < config.min_neighbor_score)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometryCheck {
    pub pass: bool,
    /// Pose of the query c0 in the candidate c0 frame.
    pub relative: Transform,
    pub inliers: usize,
}

/// The acceptance rule applied to a verified relative motion.
pub fn geometry_accepts(relative: &Transform, inliers: usize, config: &LoopConfig) -> bool {
    relative.translation.norm() < config.max_translation
        && relative.rotation_angle() < config.max_rotation
        && inliers > config.min_inliers
}

/// Relative pose between a candidate and the query from PnP on the
/// candidate's landmarks (in its own c0 frame) against the query's pixels.
pub fn geometry_check(
    query_pixels: &BTreeMap<LandmarkId, Vector2<f64>>,
    candidate_points: &BTreeMap<LandmarkId, Vector3<f64>>,
    initial: &Transform,
    rig: &CameraRig,
    config: &LoopConfig,
) -> GeometryCheck {
    let (points, pixels): (Vec<_>, Vec<_>) = query_pixels
        .iter()
        .filter_map(|(id, px)| candidate_points.get(id).map(|p| (*p, *px)))
        .unzip();
    match ransac_pnp(&points, &pixels, rig, initial, &config.ransac) {
        Ok(est) => GeometryCheck {
            pass: geometry_accepts(&est.pose, est.inlier_count, config),
            relative: est.pose,
            inliers: est.inlier_count,
        },
        Err(err) => {
            debug!("loop geometry check failed: {err}");
            GeometryCheck {
                pass: false,
                relative: *initial,
                inliers: 0,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EdgeKind {
    Adjacent,
    Loop,
}

/// Relative-pose constraint: `measurement ≈ T_from⁻¹ T_to`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseGraphEdge {
    pub from: usize,
    pub to: usize,
    pub measurement: Transform,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PoseGraph {
    pub vertices: Vec<(u64, Transform)>,
    pub edges: Vec<PoseGraphEdge>,
}

/// `[Log R_E; t_E]` of `E = Z⁻¹ T_m⁻¹ T_n`.
pub fn edge_residual(t_m: &Transform, t_n: &Transform, measurement: &Transform) -> Vector6<f64> {
    let e = measurement.inverse() * (t_m.inverse() * *t_n);
    let mut r = Vector6::zeros();
    r.fixed_rows_mut::<3>(0).copy_from(&e.rotation.log());
    r.fixed_rows_mut::<3>(3).copy_from(&e.translation);
    r
}

/// Residual and its derivatives wrt right increments `[φ; ρ]` of both poses.
pub fn edge_jacobians(
    t_m: &Transform,
    t_n: &Transform,
    measurement: &Transform,
) -> (Vector6<f64>, Matrix6<f64>, Matrix6<f64>) {
    let rel = t_m.inverse() * *t_n;
    let e = measurement.inverse() * rel;
    let phi = e.rotation.log();
    let jr_inv = right_jacobian_inv(&phi);
    let r_e = e.rotation_matrix();
    let r_z_t = measurement.rotation_matrix().transpose();
    let r_rel_t = rel.rotation_matrix().transpose();

    let mut j_m = Matrix6::zeros();
    j_m.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-jr_inv * r_rel_t));
    j_m.fixed_view_mut::<3, 3>(3, 0).copy_from(&(r_z_t * skew(&rel.translation)));
    j_m.fixed_view_mut::<3, 3>(3, 3).copy_from(&(-r_z_t));

    let mut j_n = Matrix6::zeros();
    j_n.fixed_view_mut::<3, 3>(0, 0).copy_from(&jr_inv);
    j_n.fixed_view_mut::<3, 3>(3, 3).copy_from(&r_e);

    let mut r = Vector6::zeros();
    r.fixed_rows_mut::<3>(0).copy_from(&phi);
    r.fixed_rows_mut::<3>(3).copy_from(&e.translation);
    (r, j_m, j_n)
}

impl PoseGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_vertex(&mut self, keyframe_id: u64, pose: Transform) -> usize {
        self.vertices.push((keyframe_id, pose));
        self.vertices.len() - 1
    }

    pub fn add_edge(&mut self, from: usize, to: usize, measurement: Transform, kind: EdgeKind) {
        self.edges.push(PoseGraphEdge {
            from,
            to,
            measurement,
            kind,
        });
    }

    pub fn loop_edges(&self) -> usize {
        self.edges.iter().filter(|e| e.kind == EdgeKind::Loop).count()
    }

    pub fn validate(&self) -> Result<(), LoopError> {
        for e in &self.edges {
            for v in [e.from, e.to] {
                if v >= self.vertices.len() {
                    return Err(LoopError::MissingVertex(v));
                }
            }
        }
        let mut adjacent: Vec<(usize, usize)> = self
            .edges
            .iter()
            .filter(|e| e.kind == EdgeKind::Adjacent)
            .map(|e| (e.from.min(e.to), e.from.max(e.to)))
            .collect();
        adjacent.sort_unstable();
        let chain = adjacent.len() + 1 == self.vertices.len()
            && adjacent.iter().enumerate().all(|(i, &(a, b))| a == i && b == i + 1);
        if !chain {
            return Err(LoopError::BrokenChain);
        }
        Ok(())
    }

    fn edge_cost(&self, edge: &PoseGraphEdge, r: &Vector6<f64>, delta: f64) -> f64 {
        match edge.kind {
            EdgeKind::Adjacent => r.norm_squared(),
            EdgeKind::Loop => huber_cost(r.norm_squared(), delta),
        }
    }

    /// Sum of squared adjacent residuals plus Huber-robustified loop residuals.
    pub fn objective(&self, poses: &[Transform], loop_delta: f64) -> f64 {
        self.edges
            .iter()
            .map(|e| {
                let r = edge_residual(&poses[e.from], &poses[e.to], &e.measurement);
                self.edge_cost(e, &r, loop_delta)
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseGraphResult {
    pub poses: Vec<Transform>,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    /// Objective after each accepted iteration.
    pub history: Vec<f64>,
}

/// Gauss-Newton on the pose graph with the first vertex held fixed.
///
/// Normal equations are assembled block-sparse and factorized with a sparse
/// Cholesky; a step that raises the objective is retried with Levenberg
/// damping.
pub fn pose_graph_optimize(graph: &PoseGraph, config: &LoopConfig) -> Result<PoseGraphResult, LoopError> {
    graph.validate()?;
    if graph.loop_edges() == 0 {
        return Err(LoopError::NoLoopEdge);
    }
    let n = graph.vertices.len();
    let free = n - 1;
    let delta = config.loop_huber_delta;
    let mut poses: Vec<Transform> = graph.vertices.iter().map(|v| v.1).collect();
    let initial_cost = graph.objective(&poses, delta);
    let mut cost = initial_cost;
    let mut history = vec![cost];
    let mut damping = 0.0;
    let mut iterations = 0;

    while iterations < config.max_iterations && free > 0 {
        iterations += 1;
        // block-sparse normal equations over vertices 1..n
        let mut blocks: BTreeMap<(usize, usize), Matrix6<f64>> = BTreeMap::new();
        let mut rhs = vec![Vector6::<f64>::zeros(); free];
        for e in &graph.edges {
            let (r, j_m, j_n) = edge_jacobians(&poses[e.from], &poses[e.to], &e.measurement);
            let w = match e.kind {
                EdgeKind::Adjacent => 1.0,
                EdgeKind::Loop => crate::reprojection::huber_weight(r.norm(), delta),
            };
            let parts = [(e.from, j_m), (e.to, j_n)];
            for (a, ja) in &parts {
                if *a == 0 {
                    continue;
                }
                rhs[a - 1] += w * ja.transpose() * r;
                for (b, jb) in &parts {
                    if *b == 0 {
                        continue;
                    }
                    *blocks.entry((a - 1, b - 1)).or_insert_with(Matrix6::zeros) += w * ja.transpose() * jb;
                }
            }
        }

        // gradient at rounding level: nothing left to gain
        if rhs.iter().all(|g| g.amax() < 1e-12) {
            break;
        }
        let mut accepted = false;
        loop {
            let step = solve_blocks(&blocks, &rhs, free, damping);
            if let Some(step) = step {
                let candidate: Vec<Transform> = poses
                    .iter()
                    .enumerate()
                    .map(|(i, p)| if i == 0 { *p } else { p.retract(&step[i - 1]) })
                    .collect();
                let c = graph.objective(&candidate, delta);
                if c.is_finite() && c <= cost {
                    poses = candidate;
                    let change = (cost - c) / cost.max(1e-300);
                    cost = c;
                    history.push(cost);
                    damping = if damping > 1e-4 { damping / 10.0 } else { 0.0 };
                    accepted = true;
                    if change < config.relative_tolerance {
                        return Ok(finish(poses, initial_cost, cost, iterations, history));
                    }
                    break;
                }
            }
            damping = if damping == 0.0 { 1e-4 } else { damping * 10.0 };
            if damping > 1e8 {
                break;
            }
        }
        if !accepted {
            // no descent direction left: converged to numerical precision
            break;
        }
    }
    if !cost.is_finite() || poses.iter().any(|p| !p.is_finite()) {
        return Err(LoopError::Diverged);
    }
    Ok(finish(poses, initial_cost, cost, iterations, history))
}

fn finish(poses: Vec<Transform>, initial_cost: f64, final_cost: f64, iterations: usize, history: Vec<f64>) -> PoseGraphResult {
    PoseGraphResult {
        poses,
        initial_cost,
        final_cost,
        iterations,
        history,
    }
}

fn solve_blocks(
    blocks: &BTreeMap<(usize, usize), Matrix6<f64>>,
    rhs: &[Vector6<f64>],
    free: usize,
    damping: f64,
) -> Option<Vec<Vector6<f64>>> {
    let dim = 6 * free;
    let mut tri = TriMat::new((dim, dim));
    // upper blocks mirrored, so the matrix is symmetric to the bit
    for (&(a, b), m) in blocks.iter().filter(|((a, b), _)| a <= b) {
        let m = if a == b { (m + m.transpose()) * 0.5 } else { *m };
        for i in 0..6 {
            for j in 0..6 {
                let mut v = m[(i, j)];
                if a == b && i == j {
                    v += damping * v.max(1e-9) + 1e-12;
                }
                if v != 0.0 {
                    tri.add_triplet(6 * a + i, 6 * b + j, v);
                    if a != b {
                        tri.add_triplet(6 * b + j, 6 * a + i, v);
                    }
                }
            }
        }
    }
    let h: CsMat<f64> = tri.to_csc();
    // loop edges tie distant chain segments together; a bandwidth-reducing
    // ordering keeps the factor sparse
    let ldl = Ldl::new()
        .fill_in_reduction(FillInReduction::ReverseCuthillMcKee)
        .check_symmetry(SymmetryCheck::DontCheckSymmetry)
        .numeric(h.view())
        .ok()?;
    if ldl.d().iter().any(|d| !(*d > 0.0)) {
        return None;
    }
    let b: Vec<f64> = rhs.iter().flat_map(|r| (-r).iter().copied().collect::<Vec<_>>()).collect();
    let x: Vec<f64> = ldl.solve(&b);
    if x.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some((0..free).map(|k| Vector6::from_column_slice(&x[6 * k..6 * k + 6])).collect())
}

/// Keyframe as stored for place recognition.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchivedKeyframe {
    pub keyframe_id: u64,
    pub timestamp: f64,
    pub pose: Transform,
    pub signature: PlaceSignature,
    /// Landmark positions in this keyframe's c0 frame.
    pub points_c0: BTreeMap<LandmarkId, Vector3<f64>>,
    pub pixels_c0: BTreeMap<LandmarkId, Vector2<f64>>,
}

impl ArchivedKeyframe {
    pub fn from_message(msg: &KeyframeMessage) -> Self {
        Self {
            keyframe_id: msg.keyframe_id,
            timestamp: msg.timestamp,
            pose: msg.pose,
            signature: PlaceSignature::new(msg.keyframe_id, msg.landmark_ids()),
            points_c0: msg
                .landmarks
                .iter()
                .map(|e| (e.landmark_id, msg.pose.inverse_transform_point(&e.position_w)))
                .collect(),
            pixels_c0: msg.landmarks.iter().map(|e| (e.landmark_id, e.pixel_c0)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LoopStats {
    pub candidates: usize,
    pub accepted: usize,
    pub rejected: usize,
}

/// Owns the keyframe archive and the pose graph.
#[derive(Debug, Clone)]
pub struct LoopCloser {
    config: LoopConfig,
    rig: CameraRig,
    archive: Vec<ArchivedKeyframe>,
    graph: PoseGraph,
    pub stats: LoopStats,
    /// Corrections issued so far, by loop id.
    issued: Vec<(u64, Transform)>,
}

impl LoopCloser {
    pub fn new(rig: CameraRig, config: LoopConfig) -> Self {
        Self {
            config,
            rig,
            archive: Vec::new(),
            graph: PoseGraph::new(),
            stats: LoopStats::default(),
            issued: Vec::new(),
        }
    }

    pub fn archive(&self) -> &[ArchivedKeyframe] {
        &self.archive
    }

    pub fn graph(&self) -> &PoseGraph {
        &self.graph
    }

    /// Archives a keyframe and, on a verified revisit, re-optimizes the pose
    /// graph. Returns the correction for the newest keyframe; its sequence
    /// is the loop id, to be restamped by whoever forwards it.
    pub fn process(&mut self, msg: &KeyframeMessage) -> Option<CorrectionMessage> {
        let mut kf = ArchivedKeyframe::from_message(msg);
        // loop corrections the sender had not applied yet
        for (_, c) in self.issued.iter().filter(|(id, _)| *id > msg.loop_epoch) {
            kf.pose = *c * kf.pose;
        }
        let index = self.graph.add_vertex(kf.keyframe_id, kf.pose);
        if index > 0 {
            let prev = self.graph.vertices[index - 1].1;
            self.graph
                .add_edge(index - 1, index, prev.inverse() * kf.pose, EdgeKind::Adjacent);
        }
        let history: Vec<PlaceSignature> = self.archive.iter().map(|k| k.signature.clone()).collect();
        let candidate = detect_loop(&kf.signature, &history, &self.config)
            .filter(|c| place_was_left(c.index, &history, &self.config));
        self.archive.push(kf);
        let candidate = candidate?;
        self.stats.candidates += 1;

        let query = self.archive.last().expect("just pushed");
        let cand = &self.archive[candidate.index];
        let initial = cand.pose.inverse() * query.pose;
        let check = geometry_check(&query.pixels_c0, &cand.points_c0, &initial, &self.rig, &self.config);
        if !check.pass {
            self.stats.rejected += 1;
            debug!(
                "loop {} -> {} rejected ({} inliers, {:.2} m)",
                query.keyframe_id,
                cand.keyframe_id,
                check.inliers,
                check.relative.translation.norm()
            );
            return None;
        }
        let mut graph = self.graph.clone();
        graph.add_edge(candidate.index, index, check.relative, EdgeKind::Loop);
        let result = match pose_graph_optimize(&graph, &self.config) {
            Ok(r) => r,
            Err(err) => {
                self.stats.rejected += 1;
                debug!("pose graph failed: {err}");
                return None;
            }
        };
        self.stats.accepted += 1;
        info!(
            "loop closed: keyframe {} -> {} (score {:.2}, {} inliers), cost {:.3e} -> {:.3e}",
            query.keyframe_id, cand.keyframe_id, candidate.score, check.inliers, result.initial_cost, result.final_cost
        );
        let before = graph.vertices[index].1;
        for (v, pose) in graph.vertices.iter_mut().zip(&result.poses) {
            v.1 = *pose;
        }
        for (kf, pose) in self.archive.iter_mut().zip(&result.poses) {
            kf.pose = *pose;
        }
        self.graph = graph;
        let after = result.poses[index];
        let id = self.issued.len() as u64 + 1;
        let correction = after * before.inverse();
        self.issued.push((id, correction));
        Some(CorrectionMessage {
            sequence: id,
            reference_keyframe_id: msg.keyframe_id,
            correction,
            landmark_updates: Vec::new(),
            loop_id: Some(id),
        })
    }

    /// Dense pairwise similarity of all archived keyframes, as CSV.
    pub fn similarity_csv(&self) -> String {
        similarity_matrix_csv(self.archive.iter().map(|k| &k.signature))
    }
}

pub fn similarity_matrix_csv<'a>(signatures: impl Iterator<Item = &'a PlaceSignature> + Clone) -> String {
    let sigs: Vec<&PlaceSignature> = signatures.collect();
    let mut out = String::new();
    for a in &sigs {
        let row: Vec<String> = sigs.iter().map(|b| format!("{:.4}", similarity(a, b))).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
