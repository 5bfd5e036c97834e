//! Attitude filter pulling a 5° roll error back to level on a stationary
//! IMU, next to plain gyro integration which keeps the error.

use ffvio::geometry::{quat_integrate, Quaternion};
use ffvio::imu::{gravity, AttitudeFilter, ImuSample, MadgwickConfig};
use nalgebra::Vector3;

fn main() {
    let rate = 200.0;
    let tilted = Quaternion::from_axis_angle(&Vector3::x(), 5f64.to_radians());
    let mut filter = AttitudeFilter::new(tilted, 0.0, MadgwickConfig::default(), true);
    let mut gyro_only = tilted;

    println!("{:>6} {:>14} {:>14}", "t [s]", "fused [deg]", "gyro [deg]");
    for k in 1..=(5.0 * rate) as usize {
        let t = k as f64 / rate;
        let sample = ImuSample::new(t, gravity(), Vector3::zeros());
        filter.update(&sample).unwrap();
        gyro_only = quat_integrate(&gyro_only, &sample.gyro, 1.0 / rate).unwrap();
        if (k <= 100 && k % 10 == 0) || k % 200 == 0 {
            println!(
                "{t:6.2} {:14.4} {:14.4}",
                filter.attitude().angle().to_degrees(),
                gyro_only.angle().to_degrees()
            );
        }
    }
}
