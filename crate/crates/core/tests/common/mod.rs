#![allow(dead_code)]

use std::path::PathBuf;

use ffvio::camera::CameraRig;
use ffvio::frontend::{KeyframeMessage, SnapshotEntry};
use ffvio::geometry::{Quaternion, Transform};
use ffvio::harness::{run_scenario, Mode, RunConfig, RunOutcome};
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.toml"))
}

pub fn load(name: &str) -> RunConfig {
    RunConfig::load(&scenario_path(name)).expect("scenario file parses")
}

pub fn run(cfg: &RunConfig, mode: Mode) -> RunOutcome {
    run_scenario(cfg, mode).expect("scenario runs")
}

/// Small stereo scene: keyframes drifting along +x, looking along +y, with
/// points scattered in front.
pub struct Scene {
    pub rig: CameraRig,
    pub poses: Vec<Transform>,
    pub points: Vec<Vector3<f64>>,
}

pub fn scene(keyframes: usize, seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let look = Quaternion::from_rotation_matrix(&Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, -1.0, 0.0));
    let poses = (0..keyframes)
        .map(|i| {
            Transform::new(
                look * Quaternion::from_euler_zyx(0.0, 0.02 * i as f64, 0.0),
                Vector3::new(0.15 * i as f64, 0.0, 0.01 * i as f64),
            )
        })
        .collect();
    let points = (0..120)
        .map(|_| {
            Vector3::new(
                rng.random_range(-2.0..3.0),
                rng.random_range(3.0..7.0),
                rng.random_range(-1.5..1.5),
            )
        })
        .collect();
    Scene {
        rig: CameraRig::default(),
        poses,
        points,
    }
}

/// Keyframe `k` of the scene with exact pixels and the given landmark positions.
pub fn scene_message(scene: &Scene, k: usize, positions: &[Vector3<f64>]) -> KeyframeMessage {
    let pose = scene.poses[k];
    let landmarks = scene
        .points
        .iter()
        .enumerate()
        .filter_map(|(i, x)| {
            let p_c0 = pose.inverse_transform_point(x);
            let c0 = scene.rig.project_c0(&p_c0).filter(|px| scene.rig.cam0.in_bounds(px))?;
            let c1 = scene.rig.project_c1(&p_c0).filter(|px| scene.rig.cam1.in_bounds(px));
            Some(SnapshotEntry {
                landmark_id: i as u64,
                position_w: positions[i],
                pixel_c0: c0,
                pixel_c1: c1,
            })
        })
        .collect();
    KeyframeMessage {
        keyframe_id: k as u64,
        frame_id: k as u64,
        timestamp: k as f64 * 0.1,
        pose,
        landmarks,
        ..Default::default()
    }
}

pub fn unit_vector<R: Rng>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

pub fn random_quaternion<R: Rng>(rng: &mut R) -> Quaternion {
    Quaternion::from_axis_angle(&unit_vector(rng), rng.random_range(0.0..std::f64::consts::PI))
}
