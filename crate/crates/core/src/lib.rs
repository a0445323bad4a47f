//! Kinematics, geometry, control and planning for a two-arm drawing avatar.

pub mod arm;
pub mod mesh;
pub mod se3;
pub mod teleop;
pub mod ufic;
pub mod sim;
pub mod planner;
pub mod metrics;
