//! Interframe bias estimation converging to constant injected biases.

use ffvio::harness::{run_scenario, Mode, RunConfig};

fn main() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/biased_noisefree.toml");
    let cfg = RunConfig::load(path.as_ref()).expect("scenario parses");
    let report = run_scenario(&cfg, Mode::Sync).expect("run completes").report;

    println!("true gyro bias  {:?}", report.true_gyro_bias);
    println!("true accel bias {:?}\n", report.true_accel_bias);
    println!("{:>7} {:>30} {:>30}", "t [s]", "gyro estimate", "accel estimate");
    for (t, b) in report.bias_trace.iter().step_by(50) {
        let g = b.gyro_bias;
        let a = b.accel_bias;
        println!(
            "{t:7.2}   [{:8.5} {:8.5} {:8.5}]   [{:8.5} {:8.5} {:8.5}]",
            g.x, g.y, g.z, a.x, a.y, a.z
        );
    }
}
