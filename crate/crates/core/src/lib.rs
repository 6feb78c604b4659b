//! Keypoint-based monocular spacecraft pose estimation.
//!
//! - [`geometry`]: quaternion / 6D / matrix rotations and pinhole projection.
//! - [`heatmap`]: DSNT coordinate extraction, its gradient and the keypoint losses.
//! - [`augment`]: domain randomization and histogram equalization.
//! - [`scenegen`]: synthetic labeled scenes of an 11-keypoint spacecraft.
//! - [`pem`]: attention-based pose regressor with hand-written backprop.
//! - [`metrics`]: SPEED+-style scoring.
//! - [`cli`]: the `poseforge` command line.

pub mod augment;
pub mod cli;
pub mod config;
pub mod error;
pub mod geometry;
pub mod heatmap;
pub mod metrics;
pub mod pem;
pub mod rng;
pub mod scenegen;

pub use error::{Error, Result};
