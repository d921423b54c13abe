//! Sliding-window visual-inertial estimation of aircraft pose and landing-pad
//! landmarks.
//!
//! The window holds `n` keyframe poses (attitude, velocity, position) and `N`
//! ground landmarks. Consecutive keyframes are tied by preintegrated IMU
//! factors, and every keyframe observes landmarks through a pinhole camera.
//! The first pose is a fixed prior. The remaining variables are refined by
//! damped Gauss-Newton on the manifold `SO(3)^(n-1) x R^(6(n-1) + 3N)`, with
//! each landmark's altitude held at zero through a KKT system.
//!
//! The crate is `no_std` (with `alloc`) when built without the default `std`
//! feature.
#![cfg_attr(not(feature = "std"), no_std)]
#![deny(missing_docs)]

extern crate alloc;

mod error;
pub mod graph;
pub mod imu;
pub mod manifold;
pub mod sim;
pub mod solver;
pub mod vision;

pub use error::{Error, Result};
pub use graph::{PoseState, Problem, WindowState};
pub use imu::{ImuSample, PreintegratedDelta, WorldParams};
pub use manifold::Rotation;
pub use solver::{SolveError, SolveReport, SolverConfig};
pub use vision::{CameraModel, PixelMeasurement};

/// Standard gravity magnitude, m/s².
pub const STANDARD_GRAVITY: f64 = 9.81;
