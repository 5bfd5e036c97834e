//! Generate the figure-8 scenario and summarize what the estimator will see.

use ffvio::simulator::{generate, ScenarioConfig};

fn main() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/figure8.toml");
    let cfg = ScenarioConfig::load(path.as_ref()).expect("scenario parses");
    let stream = generate(&cfg).expect("scenario is valid");

    let observed: usize = stream.frames.iter().map(|f| f.observations.len()).sum();
    let stereo: usize = stream
        .frames
        .iter()
        .flat_map(|f| &f.observations)
        .filter(|o| o.pixel_c1.is_some())
        .count();
    println!("scenario      {}", cfg.name);
    println!("imu samples   {}", stream.imu.len());
    println!("frames        {}", stream.frames.len());
    println!("landmarks     {}", stream.landmarks.len());
    println!("observations  {observed} ({stereo} with a right pixel)");
    println!("path length   {:.2} m", stream.ground_truth.length());

    let imu = stream.imu_csv();
    println!("\nfirst IMU rows:");
    for line in imu.lines().take(4) {
        println!("  {line}");
    }
}
