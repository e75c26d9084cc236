//! Monocular localization against a compact map of pole-like landmarks.
//!
//! A particle filter gives a coarse pose from odometry and per-frame pole
//! observations. When at least three observations match map poles, the
//! position is refined from the horizontal angles between them and the
//! heading by Gauss-Newton on the column residuals.

pub mod alignment;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod extraction;
pub mod filter;
pub mod io;
pub mod lap;
pub mod localize;
pub mod map;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
pub use map::{CameraIntrinsics, CompactMap, Point2, Pole, Pose2, SemanticLabel};
