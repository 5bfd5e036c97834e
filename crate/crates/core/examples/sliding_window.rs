//! Two-stage sliding-window bundle adjustment on eight stereo keyframes
//! with perturbed poses and a few corrupted pixels.

use ffvio::backend::{optimize_window, SlidingWindow, WindowConfig, WINDOW_CAPACITY};
use ffvio::camera::CameraRig;
use ffvio::frontend::{KeyframeMessage, SnapshotEntry};
use ffvio::geometry::{Quaternion, Transform};
use nalgebra::{Matrix3, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let rig = CameraRig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    // cameras look along world +y while sliding along +x
    let look = Quaternion::from_rotation_matrix(&Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, -1.0, 0.0));
    let poses: Vec<Transform> = (0..8)
        .map(|i| Transform::new(look, Vector3::new(0.15 * i as f64, 0.0, 0.0)))
        .collect();
    let points: Vec<Vector3<f64>> = (0..120)
        .map(|_| Vector3::new(rng.random_range(-2.0..3.0), rng.random_range(3.0..7.0), rng.random_range(-1.5..1.5)))
        .collect();

    let mut window = SlidingWindow::new(WINDOW_CAPACITY);
    let mut corrupted = 0;
    for (k, pose) in poses.iter().enumerate() {
        let landmarks = points
            .iter()
            .enumerate()
            .filter_map(|(i, x)| {
                let p = pose.inverse_transform_point(x);
                let mut c0 = rig.project_c0(&p).filter(|u| rig.cam0.in_bounds(u))?;
                if rng.random_bool(0.05) {
                    c0.x += 30.0;
                    corrupted += 1;
                }
                Some(SnapshotEntry {
                    landmark_id: i as u64,
                    position_w: *x + Vector3::new(0.02, -0.02, 0.01),
                    pixel_c0: c0,
                    pixel_c1: rig.project_c1(&p).filter(|u| rig.cam1.in_bounds(u)),
                })
            })
            .collect();
        let drift = if k == 0 { Transform::identity() } else { Transform::exp(&Vector6::new(0.01, -0.01, 0.01, 0.01, 0.0, -0.01)) };
        window
            .insert(&KeyframeMessage {
                keyframe_id: k as u64,
                frame_id: k as u64,
                timestamp: 0.1 * k as f64,
                pose: *pose * drift,
                landmarks,
                ..Default::default()
            })
            .unwrap();
    }

    let sol = optimize_window(&window, &rig, &WindowConfig::default()).unwrap();
    println!("{:>5} {:>5} {:>14} {:>7}", "stage", "iter", "cost", "edges");
    for r in &sol.log {
        println!("{:5} {:5} {:14.6e} {:7}", r.stage, r.iteration, r.cost, r.active_edges);
    }
    let worst = sol
        .poses
        .iter()
        .map(|(id, p)| (p.translation - poses[*id as usize].translation).norm())
        .fold(0.0, f64::max);
    println!("\n{corrupted} corrupted pixels, {} edges rejected after stage one", sol.rejected.len());
    println!("worst keyframe position error {worst:.4} m, inlier rms {:.3} px", sol.inlier_rms);
}
