//! Pose from 3D-2D correspondences: RANSAC over 4-point iterative solves,
//! and a robust pose-only refinement with every landmark held fixed.

use log::warn;
use nalgebra::{Matrix6, Vector2, Vector3, Vector6};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::CameraRig;
use crate::geometry::Transform;
use crate::reprojection::{huber_cost, huber_weight, linearize, predict, CameraIndex};

pub const MIN_CORRESPONDENCES: usize = 4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PnpError {
    #[error("tracking lost: {0} usable correspondences, need at least 4")]
    TooFewCorrespondences(usize),
    #[error("landmark and pixel lists differ in length ({points} vs {pixels})")]
    LengthMismatch { points: usize, pixels: usize },
    #[error("correspondences are collinear")]
    Degenerate,
    #[error("no hypothesis produced any inlier")]
    NoConsensus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    pub iterations: usize,
    pub inlier_threshold_px: f64,
    /// Fewer inliers than this flags the estimate as low confidence.
    pub min_confident_inliers: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            inlier_threshold_px: 3.0,
            min_confident_inliers: 10,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PnpEstimate {
    pub pose: Transform,
    pub inliers: Vec<bool>,
    pub inlier_count: usize,
    pub low_confidence: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoseRefineConfig {
    pub huber_delta_px: f64,
    pub max_iterations: usize,
    pub relative_tolerance: f64,
    /// Consecutive cost increases treated as divergence.
    pub divergence_limit: usize,
}

impl Default for PoseRefineConfig {
    fn default() -> Self {
        Self {
            huber_delta_px: 1.0,
            max_iterations: 10,
            relative_tolerance: 1e-8,
            divergence_limit: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseRefinement {
    pub pose: Transform,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub diverged: bool,
}

/// True if all points lie (numerically) on one line.
pub fn collinear(points: &[Vector3<f64>]) -> bool {
    if points.len() < 3 {
        return true;
    }
    let origin = points[0];
    let Some(far) = points
        .iter()
        .max_by(|a, b| (*a - origin).norm_squared().total_cmp(&(*b - origin).norm_squared()))
    else {
        return true;
    };
    let axis = far - origin;
    let len2 = axis.norm_squared();
    if len2 < 1e-18 {
        return true;
    }
    points
        .iter()
        .all(|p| axis.cross(&(p - origin)).norm() <= 1e-6 * len2)
}

fn squared_error(pose: &Transform, point: &Vector3<f64>, pixel: &Vector2<f64>, rig: &CameraRig) -> f64 {
    predict(pose, point, rig, CameraIndex::Left)
        .map(|px| (px - pixel).norm_squared())
        .unwrap_or(f64::INFINITY)
}

/// Robust (or plain, with `delta = ∞`) reprojection cost over the listed indices.
pub fn pose_cost(
    pose: &Transform,
    points: &[Vector3<f64>],
    pixels: &[Vector2<f64>],
    rig: &CameraRig,
    delta: f64,
) -> f64 {
    points
        .iter()
        .zip(pixels)
        .map(|(x, m)| {
            let e2 = squared_error(pose, x, m, rig);
            if delta.is_finite() {
                huber_cost(e2, delta)
            } else {
                e2
            }
        })
        .sum()
}

/// One weighted Gauss-Newton step on the pose; `None` if the system is singular.
fn gauss_newton_step(
    pose: &Transform,
    points: &[Vector3<f64>],
    pixels: &[Vector2<f64>],
    rig: &CameraRig,
    delta: f64,
    damping: f64,
) -> Option<Transform> {
    let mut h = Matrix6::<f64>::zeros();
    let mut b = Vector6::<f64>::zeros();
    for (x, m) in points.iter().zip(pixels) {
        let Some(lin) = linearize(pose, x, m, rig, CameraIndex::Left) else {
            continue;
        };
        let w = if delta.is_finite() {
            huber_weight(lin.residual.norm(), delta)
        } else {
            1.0
        };
        h += w * lin.d_pose.transpose() * lin.d_pose;
        b += w * lin.d_pose.transpose() * lin.residual;
    }
    for k in 0..6 {
        h[(k, k)] += damping * h[(k, k)].max(1e-9);
    }
    let step = h.cholesky()?.solve(&(-b));
    step.iter().all(|v| v.is_finite()).then(|| pose.retract(&step))
}

/// Levenberg-Marquardt least squares on a handful of points.
fn solve_minimal(
    initial: &Transform,
    points: &[Vector3<f64>],
    pixels: &[Vector2<f64>],
    rig: &CameraRig,
    iterations: usize,
) -> Transform {
    let mut pose = *initial;
    let mut cost = pose_cost(&pose, points, pixels, rig, f64::INFINITY);
    let mut lambda = 1e-4;
    for _ in 0..iterations {
        let Some(candidate) = gauss_newton_step(&pose, points, pixels, rig, f64::INFINITY, lambda) else {
            break;
        };
        let c = pose_cost(&candidate, points, pixels, rig, f64::INFINITY);
        if c < cost {
            let converged = cost - c < 1e-12 * cost.max(1e-300);
            pose = candidate;
            cost = c;
            lambda = (lambda * 0.1).max(1e-9);
            if converged || cost < 1e-20 {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e8 {
                break;
            }
        }
    }
    pose
}

fn inlier_mask(
    pose: &Transform,
    points: &[Vector3<f64>],
    pixels: &[Vector2<f64>],
    rig: &CameraRig,
    threshold: f64,
) -> (Vec<bool>, usize, f64) {
    let t2 = threshold * threshold;
    let mut count = 0;
    let mut score = 0.0;
    let mask = points
        .iter()
        .zip(pixels)
        .map(|(x, m)| {
            let e2 = squared_error(pose, x, m, rig);
            let inlier = e2 < t2;
            if inlier {
                count += 1;
                score += e2;
            }
            inlier
        })
        .collect();
    (mask, count, score)
}

fn select<T: Copy>(items: &[T], mask: &[bool]) -> Vec<T> {
    items
        .iter()
        .zip(mask)
        .filter(|(_, &keep)| keep)
        .map(|(x, _)| *x)
        .collect()
}

/// Camera pose `T_w_c0` maximizing the number of c0 reprojections within the
/// inlier threshold, refined on its inliers.
///
/// Hypotheses come from 4-point least-squares solves seeded at `initial`; the
/// seed itself is also scored.
pub fn ransac_pnp(
    points: &[Vector3<f64>],
    pixels: &[Vector2<f64>],
    rig: &CameraRig,
    initial: &Transform,
    config: &RansacConfig,
) -> Result<PnpEstimate, PnpError> {
    if points.len() != pixels.len() {
        return Err(PnpError::LengthMismatch {
            points: points.len(),
            pixels: pixels.len(),
        });
    }
    let n = points.len();
    if n < MIN_CORRESPONDENCES {
        return Err(PnpError::TooFewCorrespondences(n));
    }
    if collinear(points) {
        return Err(PnpError::Degenerate);
    }
    let threshold = config.inlier_threshold_px;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let (mut best_mask, mut best_count, mut best_score) = inlier_mask(initial, points, pixels, rig, threshold);
    let mut best_pose = *initial;
    for _ in 0..config.iterations {
        if best_count == n {
            break;
        }
        let idx = sample(&mut rng, n, MIN_CORRESPONDENCES).into_vec();
        let sample_points: Vec<_> = idx.iter().map(|&i| points[i]).collect();
        if collinear(&sample_points) {
            continue;
        }
        let sample_pixels: Vec<_> = idx.iter().map(|&i| pixels[i]).collect();
        let pose = solve_minimal(initial, &sample_points, &sample_pixels, rig, 10);
        let (mask, count, score) = inlier_mask(&pose, points, pixels, rig, threshold);
        if count > best_count || (count == best_count && score < best_score) {
            best_mask = mask;
            best_count = count;
            best_score = score;
            best_pose = pose;
        }
    }
    if best_count < MIN_CORRESPONDENCES {
        return Err(PnpError::NoConsensus);
    }

    // refine on the consensus set, then re-classify once
    let mut pose = best_pose;
    let mut mask = best_mask;
    let mut count = best_count;
    for _ in 0..2 {
        let inlier_points = select(points, &mask);
        let inlier_pixels = select(pixels, &mask);
        let refined = solve_minimal(&pose, &inlier_points, &inlier_pixels, rig, 20);
        let (m, c, _) = inlier_mask(&refined, points, pixels, rig, threshold);
        if c < count {
            break;
        }
        pose = refined;
        let unchanged = m == mask;
        mask = m;
        count = c;
        if unchanged {
            break;
        }
    }
    Ok(PnpEstimate {
        pose,
        inlier_count: count,
        low_confidence: count < config.min_confident_inliers,
        inliers: mask,
    })
}

/// Pose-only bundle adjustment: Huber-weighted Gauss-Newton over `T_w_c0`
/// with the landmarks fixed. Returns the lowest-cost pose visited.
pub fn inframe_ba(
    pose_guess: &Transform,
    points: &[Vector3<f64>],
    pixels: &[Vector2<f64>],
    rig: &CameraRig,
    config: &PoseRefineConfig,
) -> Result<PoseRefinement, PnpError> {
    if points.len() != pixels.len() {
        return Err(PnpError::LengthMismatch {
            points: points.len(),
            pixels: pixels.len(),
        });
    }
    if points.len() < MIN_CORRESPONDENCES {
        return Err(PnpError::TooFewCorrespondences(points.len()));
    }
    let delta = config.huber_delta_px;
    let initial_cost = pose_cost(pose_guess, points, pixels, rig, delta);
    let mut best = (*pose_guess, initial_cost);
    let mut pose = *pose_guess;
    let mut cost = initial_cost;
    let mut increases = 0;
    let mut iterations = 0;
    let mut diverged = false;
    while iterations < config.max_iterations {
        iterations += 1;
        let Some(next) = gauss_newton_step(&pose, points, pixels, rig, delta, 0.0) else {
            break;
        };
        let next_cost = pose_cost(&next, points, pixels, rig, delta);
        if !next_cost.is_finite() {
            break;
        }
        let change = (cost - next_cost).abs() / cost.max(1e-300);
        if next_cost > cost {
            increases += 1;
        } else {
            increases = 0;
        }
        pose = next;
        cost = next_cost;
        if cost < best.1 {
            best = (pose, cost);
        }
        if increases >= config.divergence_limit {
            warn!("in-frame BA diverged, keeping best pose (cost {:.3e})", best.1);
            diverged = true;
            break;
        }
        // residuals below a nano-pixel are rounding noise
        if change < config.relative_tolerance || cost <= 1e-18 * points.len() as f64 {
            break;
        }
    }
    Ok(PoseRefinement {
        pose: best.0,
        initial_cost,
        final_cost: best.1,
        iterations,
        diverged,
    })
}
