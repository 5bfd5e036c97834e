use crate::geometry::Quaternion;

/// Pitch within this distance of ±π/2 makes roll and yaw inseparable.
pub const GIMBAL_MARGIN: f64 = 1e-3;

/// Replaces the roll and pitch of `visual_guess` with those of `imu_attitude`,
/// keeping the visual yaw. Near gimbal lock the guess is returned unchanged.
pub fn rollpitch_feedforward(visual_guess: &Quaternion, imu_attitude: &Quaternion) -> Quaternion {
    let (_, pitch_v, yaw_v) = visual_guess.to_euler_zyx();
    let (roll_i, pitch_i, _) = imu_attitude.to_euler_zyx();
    let half_pi = std::f64::consts::FRAC_PI_2;
    if (pitch_v.abs() - half_pi).abs() < GIMBAL_MARGIN || (pitch_i.abs() - half_pi).abs() < GIMBAL_MARGIN {
        return *visual_guess;
    }
    Quaternion::from_euler_zyx(roll_i, pitch_i, yaw_v)
}
