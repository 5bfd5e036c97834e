//! Stereo triangulation of a noisy landmark, then IIR smoothing over
//! repeated measurements.

use ffvio::camera::CameraRig;
use ffvio::landmark::{iir_update, triangulate, StereoObservation};
use nalgebra::{Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() {
    let rig = CameraRig::default();
    let truth = Vector3::new(0.4, -0.2, 4.0);
    let noise = Normal::new(0.0, 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    let measure = |rng: &mut ChaCha8Rng| {
        let jitter = |rng: &mut ChaCha8Rng| Vector2::new(noise.sample(rng), noise.sample(rng));
        let obs = StereoObservation {
            landmark_id: 0,
            pixel_c0: rig.project_c0(&truth).unwrap() + jitter(rng),
            pixel_c1: Some(rig.project_c1(&truth).unwrap() + jitter(rng)),
            frame_id: 0,
        };
        triangulate(&obs, &rig, rng).point_c0
    };

    let mut estimate = measure(&mut rng);
    println!("{:>6} {:>14} {:>14}", "update", "measured [m]", "filtered [m]");
    for k in 1..=60 {
        let m = measure(&mut rng);
        estimate = iir_update(&estimate, &m, 0.8);
        if k % 10 == 0 {
            println!("{k:6} {:14.4} {:14.4}", (m - truth).norm(), (estimate - truth).norm());
        }
    }
}
