mod common;

use ffvio::backend::{optimize_window, SlidingWindow, WindowConfig, WINDOW_CAPACITY};
use ffvio::bias::estimate_gyro_bias;
use ffvio::camera::CameraRig;
use ffvio::frontend::{inframe_ba, pose_cost, ransac_pnp, rollpitch_feedforward, PoseRefineConfig, RansacConfig};
use ffvio::geometry::{quat_integrate, slerp, umeyama_align, alignment_cost, Quaternion, Trajectory, Transform};
use ffvio::harness::ate_rmse;
use ffvio::imu::{fused_orientation_step, ImuSample, MadgwickConfig};
use ffvio::landmark::{iir_update, triangulate, StereoObservation};
use ffvio::loop_closure::{
    detect_loop, pose_graph_optimize, similarity, EdgeKind, LoopConfig, PlaceSignature, PoseGraph,
};
use ffvio::reprojection::{huber_cost, predict};
use ffvio::simulator::{generate, ScenarioConfig, TrajectoryKind};
use nalgebra::{Vector2, Vector3, Vector6};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{scene, scene_message};

fn vec3(range: f64) -> impl Strategy<Value = Vector3<f64>> {
    (-range..range, -range..range, -range..range).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

fn quaternion() -> impl Strategy<Value = Quaternion> {
    (vec3(1.0), 0.0..std::f64::consts::PI).prop_filter_map("axis too short", |(axis, angle)| {
        (axis.norm() > 1e-3).then(|| Quaternion::from_axis_angle(&axis.normalize(), angle))
    })
}

fn transform(range: f64) -> impl Strategy<Value = Transform> {
    (quaternion(), vec3(range)).prop_map(|(q, t)| Transform::new(q, t))
}

fn path(seed: u64) -> Trajectory {
    let poses = (0..80)
        .map(|i| {
            let s = i as f64 * 0.1 + seed as f64;
            let p = Vector3::new(2.0 * s.cos(), (2.0 * s).sin(), 0.2 * (3.0 * s).sin());
            (i as f64 * 0.05, Transform::from_translation(p))
        })
        .collect();
    Trajectory::from_poses(poses).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn quaternion_sign_does_not_change_the_rotation(q in quaternion()) {
        prop_assert_eq!(q.rotation_matrix(), q.neg().rotation_matrix());
        prop_assert!(((q * q.inverse()).angle()) < 1e-12);
        prop_assert!((q.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exp_and_log_round_trip(q in quaternion()) {
        prop_assert!(Quaternion::exp(&q.log()).rotation_eq(&q, 1e-12));
    }

    #[test]
    fn integration_stays_unit(q in quaternion(), w in vec3(5.0), dt in 0.0..0.1f64) {
        prop_assert!((quat_integrate(&q, &w, dt).unwrap().norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn transform_inverse_round_trip(t in transform(10.0), p in vec3(10.0)) {
        prop_assert!((t.inverse_transform_point(&t.transform_point(&p)) - p).norm() < 1e-9);
        prop_assert!((t * t.inverse()).approx_eq(&Transform::identity(), 1e-12, 1e-9));
        prop_assert!(t.retract(&Vector6::zeros()).approx_eq(&t, 1e-15, 0.0));
    }

    #[test]
    fn slerp_angle_is_proportional(a in quaternion(), b in quaternion(), t in 0.0..1.0f64) {
        let total = a.angle_to(&b);
        prop_assert!((a.angle_to(&slerp(&a, &b, t)) - t * total).abs() < 1e-9);
    }

    #[test]
    fn alignment_residual_ignores_a_common_motion(seed in 0u64..50, s in transform(5.0), m in transform(5.0)) {
        let gt = path(seed);
        let est = gt.transformed(&s).iter().enumerate()
            .map(|(i, (t, p))| (*t, Transform::new(p.rotation, p.translation + Vector3::new(0.01 * (i % 3) as f64, -0.02 * (i % 5) as f64, 0.0))))
            .collect::<Vec<_>>();
        let est = Trajectory::from_poses(est).unwrap();
        let base = alignment_cost(&est, &gt, &umeyama_align(&est, &gt).unwrap());
        let (est2, gt2) = (est.transformed(&m), gt.transformed(&m));
        let moved = alignment_cost(&est2, &gt2, &umeyama_align(&est2, &gt2).unwrap());
        prop_assert!((base - moved).abs() < 1e-9);
    }

    #[test]
    fn ate_ignores_a_rigid_motion_of_the_estimate(seed in 0u64..50, s in transform(10.0)) {
        let gt = path(seed);
        let est = Trajectory::from_poses(
            gt.iter().enumerate()
                .map(|(i, (t, p))| (*t, Transform::from_translation(p.translation + Vector3::new(0.0, 0.03 * ((i * 7) % 4) as f64, 0.01))))
                .collect(),
        ).unwrap();
        let a = ate_rmse(&est, &gt, 1e-6).unwrap();
        let b = ate_rmse(&est.transformed(&s), &gt, 1e-6).unwrap();
        prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
    }

    #[test]
    fn gated_fusion_is_plain_integration(q in quaternion(), w in vec3(2.0), dt in 0.001..0.05f64) {
        let s = ImuSample::new(0.0, Vector3::new(3.0, 0.0, 1.0), w);
        prop_assert_eq!(
            fused_orientation_step(&q, &s, dt, &MadgwickConfig::default()).unwrap(),
            quat_integrate(&q, &w, dt).unwrap()
        );
    }

    #[test]
    fn gyro_bias_estimate_is_world_frame_free(qa in quaternion(), world in quaternion(), b in vec3(0.05)) {
        let dt = 0.05;
        let q_visual = qa;
        let q_imu = q_visual * Quaternion::exp(&(b * dt));
        let plain = estimate_gyro_bias(&q_visual, &q_imu, dt).unwrap();
        let rotated = estimate_gyro_bias(&(world * q_visual), &(world * q_imu), dt).unwrap();
        prop_assert!((plain - rotated).norm() < 1e-9);
    }

    #[test]
    fn iir_output_is_between_its_inputs(a in vec3(10.0), b in vec3(10.0), coeff in 0.0..=1.0f64) {
        let x = iir_update(&a, &b, coeff);
        for k in 0..3 {
            prop_assert!(x[k] >= a[k].min(b[k]) - 1e-12 && x[k] <= a[k].max(b[k]) + 1e-12);
        }
    }

    #[test]
    fn triangulation_reprojects_exactly(x in -1.0..1.0f64, y in -0.7..0.7f64, z in 0.8..8.0f64) {
        let rig = CameraRig::default();
        let p = Vector3::new(x, y, z);
        let (u0, u1) = (rig.project_c0(&p).unwrap(), rig.project_c1(&p).unwrap());
        prop_assume!(rig.cam0.in_bounds(&u0) && rig.cam1.in_bounds(&u1));
        let obs = StereoObservation { landmark_id: 0, pixel_c0: u0, pixel_c1: Some(u1), frame_id: 0 };
        let tri = triangulate(&obs, &rig, &mut ChaCha8Rng::seed_from_u64(0));
        prop_assert!(tri.valid);
        prop_assert!((rig.project_c0(&tri.point_c0).unwrap() - u0).norm() < 1e-9);
    }

    #[test]
    fn feedforward_is_idempotent(q in quaternion(), imu in quaternion()) {
        let once = rollpitch_feedforward(&q, &imu);
        let twice = rollpitch_feedforward(&once, &imu);
        prop_assert!(once.rotation_eq(&twice, 1e-12));
    }

    #[test]
    fn similarity_is_symmetric_and_one_only_for_equal_sets(
        a in proptest::collection::btree_set(0u64..60, 0..30),
        b in proptest::collection::btree_set(0u64..60, 0..30),
    ) {
        let (sa, sb) = (PlaceSignature::new(0, a.clone()), PlaceSignature::new(1, b.clone()));
        prop_assert_eq!(similarity(&sa, &sb), similarity(&sb, &sa));
        let s = similarity(&sa, &sb);
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert_eq!(s == 1.0, a == b && !a.is_empty());
    }

    #[test]
    fn keyframe_rule_depends_only_on_relative_motion(base in transform(5.0), delta in transform(0.3)) {
        use ffvio::frontend::keyframe_decision;
        let local = keyframe_decision(&delta, Some(&Transform::identity()));
        // stay away from the boundaries where rounding decides
        prop_assume!((delta.translation.norm() - 0.1).abs() > 1e-9 && (delta.rotation_angle() - 0.2).abs() > 1e-9);
        prop_assert_eq!(keyframe_decision(&(base * delta), Some(&base)), local);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ransac_pnp_commutes_with_a_world_motion(seed in 0u64..1000, g in transform(3.0)) {
        let s = scene(1, seed);
        let pose = s.poses[0];
        let (points, pixels): (Vec<_>, Vec<_>) = s.points.iter()
            .filter_map(|x| s.rig.project_c0(&pose.inverse_transform_point(x)).filter(|u| s.rig.cam0.in_bounds(u)).map(|u| (*x, u)))
            .unzip();
        let guess = pose * Transform::exp(&Vector6::new(0.01, -0.02, 0.01, 0.05, 0.0, -0.03));
        let cfg = RansacConfig::default();
        let a = ransac_pnp(&points, &pixels, &s.rig, &guess, &cfg).unwrap();
        let moved: Vec<_> = points.iter().map(|p| g.transform_point(p)).collect();
        let b = ransac_pnp(&moved, &pixels, &s.rig, &(g * guess), &cfg).unwrap();
        prop_assert!((g * a.pose).approx_eq(&b.pose, 1e-6, 1e-6));
        prop_assert_eq!(a.inliers, b.inliers);
    }

    #[test]
    fn inframe_ba_never_raises_the_cost(seed in 0u64..1000, noise in 0.0..2.0f64, kick in vec3(0.05)) {
        let s = scene(1, seed);
        let pose = s.poses[0];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (points, pixels): (Vec<_>, Vec<_>) = s.points.iter()
            .filter_map(|x| {
                let u = s.rig.project_c0(&pose.inverse_transform_point(x)).filter(|u| s.rig.cam0.in_bounds(u))?;
                let jitter = Vector2::new(rand::Rng::random_range(&mut rng, -1.0..1.0), rand::Rng::random_range(&mut rng, -1.0..1.0));
                Some((*x, u + noise * jitter))
            })
            .unzip();
        let guess = pose * Transform::exp(&Vector6::new(kick.x * 0.2, kick.y * 0.2, kick.z * 0.2, kick.x, kick.y, kick.z));
        let cfg = PoseRefineConfig::default();
        let r = inframe_ba(&guess, &points, &pixels, &s.rig, &cfg).unwrap();
        let before = pose_cost(&guess, &points, &pixels, &s.rig, cfg.huber_delta_px);
        let after = pose_cost(&r.pose, &points, &pixels, &s.rig, cfg.huber_delta_px);
        prop_assert!(after <= before);
    }

    #[test]
    fn window_keeps_its_gauge_and_descends(seed in 0u64..1000, corrupt in 0.0..0.1f64) {
        let s = scene(8, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = SlidingWindow::new(WINDOW_CAPACITY);
        for k in 0..8 {
            let mut m = scene_message(&s, k, &s.points);
            for e in &mut m.landmarks {
                if rand::Rng::random_bool(&mut rng, corrupt) {
                    e.pixel_c0.x += 30.0;
                }
            }
            if k > 0 {
                m.pose = m.pose * Transform::exp(&Vector6::new(0.005, 0.0, -0.005, 0.02, -0.01, 0.01));
            }
            w.insert(&m).unwrap();
        }
        let fixed = w.keyframes().next().unwrap().pose;
        let cfg = WindowConfig::default();
        let sol = optimize_window(&w, &s.rig, &cfg).unwrap();
        prop_assert_eq!(sol.poses[0].1, fixed);
        prop_assert_eq!(sol.log.len(), 2 * cfg.stage_iterations);
        for stage in [1, 2] {
            let costs: Vec<f64> = sol.log.iter().filter(|r| r.stage == stage).map(|r| r.cost).collect();
            prop_assert!(costs.windows(2).all(|c| c[1] <= c[0]));
        }
        // the final cost counts only the edges that survived stage one
        let pose_of = |id: u64| sol.poses.iter().find(|(k, _)| *k == id).unwrap().1;
        let point_of = |id| sol.landmarks.get(&id).copied().unwrap_or_else(|| w.landmarks()[&id]);
        let kept: f64 = w.edges().iter()
            .filter(|e| !sol.rejected.iter().any(|r| r.landmark_id == e.landmark_id && r.keyframe_id == e.keyframe_id && r.camera == e.camera))
            .map(|e| {
                let px = predict(&pose_of(e.keyframe_id), &point_of(e.landmark_id), &s.rig, e.camera).unwrap();
                huber_cost((px - e.measurement).norm_squared(), cfg.huber_delta_px)
            })
            .sum();
        prop_assert!((kept - sol.final_cost).abs() <= 1e-9 * kept.max(1.0), "{} vs {}", kept, sol.final_cost);
    }

    #[test]
    fn pose_graph_keeps_its_anchor_and_descends(drift in vec3(0.02), yaw in -0.01..0.01f64) {
        let n = 30;
        let truth: Vec<Transform> = (0..n)
            .map(|i| {
                let a = i as f64 * std::f64::consts::TAU / n as f64;
                Transform::new(Quaternion::from_axis_angle(&Vector3::z(), a), Vector3::new(2.0 * a.cos(), 2.0 * a.sin(), 0.0))
            })
            .collect();
        let wobble = Transform::new(Quaternion::from_axis_angle(&Vector3::z(), yaw), drift);
        let mut g = PoseGraph::new();
        let mut est = truth[0];
        g.add_vertex(0, est);
        for i in 1..n {
            let z = truth[i - 1].inverse() * truth[i] * wobble;
            est = est * z;
            g.add_vertex(i as u64, est);
            g.add_edge(i - 1, i, z, EdgeKind::Adjacent);
        }
        g.add_edge(0, n - 1, truth[0].inverse() * truth[n - 1], EdgeKind::Loop);
        let r = pose_graph_optimize(&g, &LoopConfig::default()).unwrap();
        prop_assert_eq!(r.poses[0], g.vertices[0].1);
        prop_assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(r.final_cost <= r.initial_cost);
    }
}

#[test]
fn loop_detection_needs_every_condition() {
    let cfg = LoopConfig::default();
    let query = PlaceSignature::new(100, 0..100);
    // history: candidate at index 10 overlapping `best` ids, its three
    // predecessors overlapping `pre` ids each, recent entries inside the guard
    let history = |best: u64, pre: [u64; 3], recent_match: bool| {
        let mut h: Vec<PlaceSignature> = (0..7).map(|i| PlaceSignature::new(i, 1000 + 100 * i..1100 + 100 * i)).collect();
        for (k, p) in pre.iter().enumerate() {
            h.push(PlaceSignature::new(7 + k as u64, (0..*p).chain(5000..5000 + 100 - p)));
        }
        h.push(PlaceSignature::new(10, (0..best).chain(6000..6000 + 100 - best)));
        for i in 0..cfg.temporal_guard as u64 {
            let ids: Vec<u64> = if recent_match { (0..100).collect() } else { (7000 + 100 * i..7100 + 100 * i).collect() };
            h.push(PlaceSignature::new(11 + i, ids));
        }
        h
    };
    // ids out of 100 give the score directly
    let found = detect_loop(&query, &history(30, [20, 20, 20], false), &cfg).map(|c| c.keyframe_id);
    assert_eq!(found, Some(10));
    assert!(detect_loop(&query, &history(20, [16, 16, 16], false), &cfg).is_none(), "score not above 0.2");
    assert!(detect_loop(&query, &history(30, [16, 15, 16], false), &cfg).is_none(), "weak predecessor");
    assert!(detect_loop(&query, &history(30, [16, 16, 10], false), &cfg).is_none(), "weak predecessor");
    // perfect matches inside the temporal guard are never candidates
    assert_eq!(detect_loop(&query, &history(30, [20, 20, 20], true), &cfg).map(|c| c.keyframe_id), Some(10));
    assert!(detect_loop(&query, &history(0, [0, 0, 0], true), &cfg).is_none());
}

#[test]
fn generation_is_deterministic() {
    let cfg = ScenarioConfig { duration: 4.0, ..Default::default() };
    let a = generate(&cfg).unwrap();
    let b = generate(&cfg).unwrap();
    assert_eq!(a.imu_csv(), b.imu_csv());
    assert_eq!(a.observations_csv(), b.observations_csv());
    assert_eq!(a.ground_truth, b.ground_truth);
    let other = generate(&ScenarioConfig { seed: cfg.seed + 1, ..cfg.clone() }).unwrap();
    assert_ne!(a.imu_csv(), other.imu_csv());
}

#[test]
fn exact_sensors_on_exact_paths_give_zero_bias() {
    use ffvio::harness::Mode;
    for kind in [TrajectoryKind::Static, TrajectoryKind::Line] {
        let mut cfg = common::load("figure8_noisefree");
        cfg.scenario.trajectory.kind = kind;
        cfg.scenario.trajectory.bob_amplitude = 0.0;
        cfg.scenario.trajectory.speed = 0.5;
        cfg.scenario.duration = 8.0;
        let r = common::run(&cfg, Mode::Sync).report;
        assert!(r.failure.is_none());
        let worst = r
            .bias_trace
            .iter()
            .map(|(_, b)| b.gyro_bias.amax().max(b.accel_bias.amax()))
            .fold(0.0, f64::max);
        assert!(worst < 1e-6, "{kind:?}: {worst}");
    }
}
