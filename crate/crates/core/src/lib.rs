//! Anonymous mutual localization for robot teams.
//!
//! Each robot reports odometry in its own fixed frame and detects other
//! robots without knowing which one it saw. The joint state of all robots and
//! all frame offsets is estimated with an unscented Kalman filter whose
//! detection update weighs every association hypothesis.

// Validation writes `!(v > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod association;
pub mod bench;
pub mod config;
pub mod cpdaf;
pub mod detection;
pub mod error;
pub mod geom;
pub mod linalg;
pub mod metrics;
pub mod odometry;
pub mod runlog;
pub mod sim;
pub mod state;
pub mod unscented;

pub use error::{Error, Result};
