use nalgebra::Vector3;

use crate::geometry::{associate, umeyama_align, GeometryError, Trajectory, Transform};

/// Rigid alignment of `est` onto `gt`. Falls back to matching centroids when
/// the trajectory is too degenerate (static, collinear) to fix a rotation.
pub fn align(est: &Trajectory, gt: &Trajectory) -> Result<Transform, GeometryError> {
    match umeyama_align(est, gt) {
        Err(GeometryError::DegenerateAlignment) => {
            if est.is_empty() || est.len() != gt.len() {
                return Err(GeometryError::LengthMismatch {
                    left: est.len(),
                    right: gt.len(),
                });
            }
            let mean = |t: &Trajectory| t.positions().iter().sum::<Vector3<f64>>() / t.len() as f64;
            Ok(Transform::from_translation(mean(gt) - mean(est)))
        }
        other => other,
    }
}

/// Per-pose translational error after alignment, for associated pairs.
pub fn aligned_errors(est: &Trajectory, gt: &Trajectory, tolerance: f64) -> Result<Vec<(f64, f64)>, GeometryError> {
    let (e, g) = associate(est, gt, tolerance)?;
    if e.len() < 3 {
        return Err(GeometryError::AssociationFailed);
    }
    let s = align(&e, &g)?;
    Ok(e
        .iter()
        .zip(g.iter())
        .map(|((t, pe), (_, pg))| (*t, (s.transform_point(&pe.translation) - pg.translation).norm()))
        .collect())
}

/// Absolute trajectory error: RMSE of aligned translational residuals.
pub fn ate_rmse(est: &Trajectory, gt: &Trajectory, tolerance: f64) -> Result<f64, GeometryError> {
    let errors = aligned_errors(est, gt, tolerance)?;
    Ok((errors.iter().map(|(_, e)| e * e).sum::<f64>() / errors.len() as f64).sqrt())
}
