//! Simulation and estimation toolkit for constant velocity-bias recovery
//! from dense brightness and depth images.
//!
//! The crate synthesizes camera motion through a static convex scene,
//! renders brightness/depth fields on sphere charts, and runs nonlinear
//! observers that estimate constant measurement biases on the linear and
//! angular velocities, together with the differential-geometry, transport
//! and observability machinery needed to exercise each piece.

pub mod cap;
pub mod config;
pub mod error;
pub mod grid;
pub mod imgio;
pub mod kinematics;
pub mod observability;
pub mod observer;
pub mod pipeline;
pub mod plots;
pub mod scene;
pub mod selftest;
pub mod sphere;
pub mod transport;

pub use error::{Error, Result};

// Re-exported so downstream crates use the same linear-algebra types.
pub use nalgebra;
