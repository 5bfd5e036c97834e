//! Frame pose from 3D-2D matches: RANSAC PnP rejects corrupted matches, the
//! in-frame bundle adjustment then polishes the pose on the inliers.

use ffvio::camera::CameraRig;
use ffvio::frontend::{inframe_ba, ransac_pnp, PoseRefineConfig, RansacConfig};
use ffvio::geometry::Transform;
use nalgebra::{Vector2, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let rig = CameraRig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let truth = Transform::exp(&Vector6::new(0.3, -0.1, 0.2, 0.05, 0.1, -0.02));

    let mut points = Vec::new();
    let mut pixels = Vec::new();
    while points.len() < 150 {
        let p_c = Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-1.5..1.5), rng.random_range(2.0..8.0));
        let Some(px) = rig.project_c0(&p_c).filter(|u| rig.cam0.in_bounds(u)) else {
            continue;
        };
        points.push(truth.transform_point(&p_c));
        pixels.push(px + Vector2::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)));
    }
    // one match in five is wrong by tens of pixels
    for px in pixels.iter_mut().step_by(5) {
        *px += Vector2::new(rng.random_range(20.0..60.0), rng.random_range(-60.0..-20.0));
    }

    let guess = truth * Transform::exp(&Vector6::new(0.05, 0.05, -0.05, 0.03, -0.03, 0.02));
    let error = |t: &Transform| (t.translation - truth.translation).norm();
    println!("initial guess      {:.4} m off", error(&guess));

    let pnp = ransac_pnp(&points, &pixels, &rig, &guess, &RansacConfig::default()).unwrap();
    println!("ransac pnp         {:.4} m off, {} of {} inliers", error(&pnp.pose), pnp.inlier_count, points.len());

    let (inlier_points, inlier_pixels): (Vec<_>, Vec<_>) = points
        .iter()
        .zip(&pixels)
        .zip(&pnp.inliers)
        .filter(|(_, keep)| **keep)
        .map(|((p, u), _)| (*p, *u))
        .unzip();
    let ba = inframe_ba(&pnp.pose, &inlier_points, &inlier_pixels, &rig, &PoseRefineConfig::default()).unwrap();
    println!(
        "in-frame BA        {:.4} m off, cost {:.3} -> {:.3} in {} iterations",
        error(&ba.pose),
        ba.initial_cost,
        ba.final_cost,
        ba.iterations
    );
}
