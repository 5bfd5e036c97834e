//! Every on/off combination of bias feedback and the landmark filter on a
//! short biased run.

use ffvio::harness::{ablation_matrix, ablation_table, Feature, Mode, RunConfig};

fn main() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/biased.toml");
    let mut cfg = RunConfig::load(path.as_ref()).expect("scenario parses");
    cfg.scenario.duration = 10.0;
    let reports = ablation_matrix(&cfg, &[Feature::BiasFeedback, Feature::Iir], Mode::Sync).expect("runs complete");
    print!("{}", ablation_table(&reports));
}
