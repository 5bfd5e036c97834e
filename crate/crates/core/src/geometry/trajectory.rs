use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use super::{GeometryError, Quaternion, Transform};

/// Default nearest-timestamp association tolerance, seconds.
pub const ASSOCIATION_TOLERANCE: f64 = 0.01;

/// Timestamped pose sequence with strictly increasing timestamps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    poses: Vec<(f64, Transform)>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_poses(poses: Vec<(f64, Transform)>) -> Result<Self, GeometryError> {
        for w in poses.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(GeometryError::NonMonotonicTimestamp {
                    previous: w[0].0,
                    next: w[1].0,
                });
            }
        }
        Ok(Self { poses })
    }

    pub fn push(&mut self, timestamp: f64, pose: Transform) -> Result<(), GeometryError> {
        if let Some(&(last, _)) = self.poses.last() {
            if timestamp <= last {
                return Err(GeometryError::NonMonotonicTimestamp {
                    previous: last,
                    next: timestamp,
                });
            }
        }
        self.poses.push((timestamp, pose));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn poses(&self) -> &[(f64, Transform)] {
        &self.poses
    }

    pub fn iter(&self) -> impl Iterator<Item = &(f64, Transform)> {
        self.poses.iter()
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.poses.iter().map(|(_, p)| p.translation).collect()
    }

    /// Sum of distances between consecutive positions.
    pub fn length(&self) -> f64 {
        self.poses
            .windows(2)
            .map(|w| (w[1].1.translation - w[0].1.translation).norm())
            .sum()
    }

    /// Left-multiplies every pose by `s`.
    pub fn transformed(&self, s: &Transform) -> Self {
        Self {
            poses: self.poses.iter().map(|(t, p)| (*t, s * p)).collect(),
        }
    }

    /// Serializes in TUM format, `timestamp tx ty tz qx qy qz qw`, nine decimals.
    pub fn to_tum_string(&self) -> String {
        let mut out = String::new();
        for (t, pose) in &self.poses {
            let p = pose.translation;
            let q = pose.rotation;
            let _ = writeln!(
                out,
                "{:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9}",
                t, p.x, p.y, p.z, q.x, q.y, q.z, q.w
            );
        }
        out
    }

    pub fn write_tum(&self, path: &Path) -> std::io::Result<()> {
        let mut file = std::fs::File::create(path)?;
        file.write_all(self.to_tum_string().as_bytes())
    }

    /// Parses TUM text. Blank lines and `#` comments are skipped.
    pub fn from_tum_reader<R: BufRead>(reader: R) -> Result<Self, GeometryError> {
        let mut traj = Trajectory::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| GeometryError::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Result<Vec<f64>, _> =
                trimmed.split_whitespace().map(str::parse::<f64>).collect();
            let fields = fields.map_err(|e| GeometryError::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?;
            if fields.len() != 8 {
                return Err(GeometryError::Parse {
                    line: idx + 1,
                    message: format!("expected 8 fields, found {}", fields.len()),
                });
            }
            let rotation = Quaternion::normalized(fields[7], fields[4], fields[5], fields[6])?;
            let pose = Transform::new(rotation, Vector3::new(fields[1], fields[2], fields[3]));
            traj.push(fields[0], pose)?;
        }
        Ok(traj)
    }

    pub fn read_tum(path: &Path) -> Result<Self, GeometryError> {
        let file = std::fs::File::open(path).map_err(|e| GeometryError::Parse {
            line: 0,
            message: format!("{}: {e}", path.display()),
        })?;
        Self::from_tum_reader(std::io::BufReader::new(file))
    }
}

/// Pairs each pose of `est` with the nearest-in-time pose of `gt` within `tolerance`.
///
/// Each ground-truth pose is used at most once; unmatched poses are dropped.
pub fn associate(
    est: &Trajectory,
    gt: &Trajectory,
    tolerance: f64,
) -> Result<(Trajectory, Trajectory), GeometryError> {
    let gt_poses = gt.poses();
    let mut matched_est = Vec::new();
    let mut matched_gt = Vec::new();
    let mut cursor = 0usize;
    let mut last_used: Option<usize> = None;
    for &(t, pose) in est.poses() {
        while cursor + 1 < gt_poses.len() && gt_poses[cursor + 1].0 <= t {
            cursor += 1;
        }
        let mut best: Option<(usize, f64)> = None;
        for j in cursor.saturating_sub(1)..(cursor + 2).min(gt_poses.len()) {
            let d = (gt_poses[j].0 - t).abs();
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((j, d));
            }
        }
        if let Some((j, d)) = best {
            if d <= tolerance && last_used.is_none_or(|u| j > u) {
                matched_est.push((t, pose));
                matched_gt.push(gt_poses[j]);
                last_used = Some(j);
            }
        }
    }
    if matched_est.is_empty() {
        return Err(GeometryError::AssociationFailed);
    }
    Ok((
        Trajectory::from_poses(matched_est)?,
        Trajectory::from_poses(matched_gt)?,
    ))
}

/// Rigid least-squares alignment of associated trajectories.
///
/// Returns `S` minimizing `Σ ‖S p_est,i − p_gt,i‖²` (no scale). Fails for
/// fewer than three poses or (near-)collinear position sets.
pub fn umeyama_align(est: &Trajectory, gt: &Trajectory) -> Result<Transform, GeometryError> {
    if est.len() != gt.len() {
        return Err(GeometryError::LengthMismatch {
            left: est.len(),
            right: gt.len(),
        });
    }
    if est.len() < 3 {
        return Err(GeometryError::DegenerateAlignment);
    }
    let pe = est.positions();
    let pg = gt.positions();
    let n = pe.len() as f64;
    let ce: Vector3<f64> = pe.iter().sum::<Vector3<f64>>() / n;
    let cg: Vector3<f64> = pg.iter().sum::<Vector3<f64>>() / n;

    let mut cross = Matrix3::zeros();
    let mut scatter_e = Matrix3::zeros();
    let mut scatter_g = Matrix3::zeros();
    for (e, g) in pe.iter().zip(&pg) {
        let de = e - ce;
        let dg = g - cg;
        cross += dg * de.transpose();
        scatter_e += de * de.transpose();
        scatter_g += dg * dg.transpose();
    }
    for scatter in [&scatter_e, &scatter_g] {
        let mut sv = scatter.symmetric_eigenvalues();
        sv.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
        if sv[0] <= 0.0 || sv[1] <= 1e-12 * sv[0] {
            return Err(GeometryError::DegenerateAlignment);
        }
    }

    let svd = cross.svd(true, true);
    let u = svd.u.ok_or(GeometryError::DegenerateAlignment)?;
    let v_t = svd.v_t.ok_or(GeometryError::DegenerateAlignment)?;
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * v_t;
    let t = cg - r * ce;
    Ok(Transform::new(Quaternion::from_rotation_matrix(&r), t))
}

/// Residual sum `Σ ‖S p_est,i − p_gt,i‖²` for a given alignment.
pub fn alignment_cost(est: &Trajectory, gt: &Trajectory, s: &Transform) -> f64 {
    est.positions()
        .iter()
        .zip(gt.positions())
        .map(|(e, g)| (s.transform_point(e) - g).norm_squared())
        .sum()
}
