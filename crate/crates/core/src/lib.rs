pub mod backend;
pub mod bias;
pub mod camera;
pub mod frontend;
pub mod geometry;
pub mod harness;
pub mod imu;
pub mod landmark;
pub mod loop_closure;
pub mod reprojection;
pub mod simulator;
