//! Run a scenario, write both trajectories as TUM files, and score them
//! from disk the way `ffvio eval` does.

use ffvio::harness::{evaluate_files, run_scenario, Mode, RunConfig};

fn main() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/two_circle.toml");
    let cfg = RunConfig::load(path.as_ref()).expect("scenario parses");
    let outcome = run_scenario(&cfg, Mode::Sync).expect("run completes");

    let dir = std::env::temp_dir().join("ffvio-evaluate-example");
    std::fs::create_dir_all(&dir).unwrap();
    let (est, gt) = (dir.join("estimate.tum"), dir.join("groundtruth.tum"));
    outcome.estimate.write_tum(&est).unwrap();
    outcome.ground_truth.write_tum(&gt).unwrap();

    let from_disk = evaluate_files(&est, &gt).unwrap();
    println!("ATE in memory  {:.6} m", outcome.report.ate_rmse);
    println!("ATE from files {from_disk:.6} m");
    println!("loop closures  {}", outcome.report.loop_closures);
    println!("files in {}", dir.display());
}
