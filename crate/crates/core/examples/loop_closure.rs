//! Pose-graph correction of a drifting circle once the end is tied back to
//! the start.

use ffvio::geometry::{Quaternion, Transform};
use ffvio::loop_closure::{pose_graph_optimize, EdgeKind, LoopConfig, PoseGraph};
use nalgebra::Vector3;

fn main() {
    let n = 60;
    let truth: Vec<Transform> = (0..n)
        .map(|i| {
            let a = i as f64 * std::f64::consts::TAU / n as f64;
            Transform::new(Quaternion::from_axis_angle(&Vector3::z(), a), Vector3::new(2.0 * a.cos(), 2.0 * a.sin(), 0.0))
        })
        .collect();
    // odometry that over-turns and creeps upward a little on every step
    let bias = Transform::new(Quaternion::from_axis_angle(&Vector3::z(), 0.003), Vector3::new(0.004, 0.0, 0.002));

    let mut graph = PoseGraph::new();
    let mut pose = truth[0];
    graph.add_vertex(0, pose);
    for i in 1..n {
        let step = truth[i - 1].inverse() * truth[i] * bias;
        pose = pose * step;
        graph.add_vertex(i as u64, pose);
        graph.add_edge(i - 1, i, step, EdgeKind::Adjacent);
    }
    graph.add_edge(0, n - 1, truth[0].inverse() * truth[n - 1], EdgeKind::Loop);

    let result = pose_graph_optimize(&graph, &LoopConfig::default()).unwrap();
    let endpoint = |p: &Transform| (p.translation - truth[n - 1].translation).norm();
    println!("endpoint error before {:.4} m", endpoint(&graph.vertices[n - 1].1));
    println!("endpoint error after  {:.4} m", endpoint(&result.poses[n - 1]));
    println!("cost {:.3e} -> {:.3e} in {} iterations", result.initial_cost, result.final_cost, result.iterations);
}
