//! Simulation, perception, error modeling and imitation learning for
//! vision-based gate racing with a keypoint-rendering stand-in for the camera.

// Validation uses `!(x > 0.0)` so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod control;
pub mod dynamics;
pub mod error;
pub mod error_model;
pub mod eval;
pub mod geometry;
pub mod imitation;
pub mod nn;
pub mod perception;
pub mod pipeline;
pub mod policy;
pub mod report;
pub mod seeding;

pub use error::{FalconError, Result};
