//! Trajectory accuracy: RMSE of translation and heading plus recall tiers.
//!
//! Tier bounds are strict (`error < bound`). Sequences are compared frame by
//! frame without any temporal or rigid alignment.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map::{normalize_angle, Pose2};

pub const TRANSLATION_TIERS_M: [f64; 3] = [0.5, 1.0, 2.0];
pub const POSE_TIERS_M: [f64; 3] = [0.25, 0.5, 5.0];
pub const POSE_TIERS_DEG: [f64; 3] = [2.0, 5.0, 10.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rmse_trans_m: f64,
    pub rmse_rot_deg: f64,
    pub recall_trans: [f64; 3],
    pub recall_pose: [f64; 3],
    pub frame_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameError {
    pub trans_m: f64,
    pub rot_deg: f64,
}

/// Absolute heading difference in degrees, wrapped into `[0, 180]`.
pub fn heading_error_deg(estimate: f64, truth: f64) -> f64 {
    normalize_angle(estimate - truth).abs().to_degrees()
}

pub fn frame_errors(estimate: &[Pose2], truth: &[Pose2]) -> Result<Vec<FrameError>> {
    if estimate.len() != truth.len() {
        return Err(Error::Inconsistent(format!(
            "estimate has {} frames, truth has {}",
            estimate.len(),
            truth.len()
        )));
    }
    Ok(estimate
        .iter()
        .zip(truth)
        .map(|(e, t)| FrameError {
            trans_m: e.position().distance(&t.position()),
            rot_deg: heading_error_deg(e.heading(), t.heading()),
        })
        .collect())
}

pub fn compute_metrics(estimate: &[Pose2], truth: &[Pose2]) -> Result<MetricsReport> {
    let errors = frame_errors(estimate, truth)?;
    if errors.is_empty() {
        return Err(Error::Inconsistent("cannot evaluate an empty trajectory".into()));
    }
    let n = errors.len() as f64;
    let rmse = |f: fn(&FrameError) -> f64| (errors.iter().map(|e| f(e).powi(2)).sum::<f64>() / n).sqrt();
    let fraction = |pred: &dyn Fn(&FrameError) -> bool| errors.iter().filter(|e| pred(e)).count() as f64 / n;

    let recall_trans = TRANSLATION_TIERS_M.map(|bound| fraction(&|e| e.trans_m < bound));
    let mut recall_pose = [0.0; 3];
    for (i, slot) in recall_pose.iter_mut().enumerate() {
        let (m, deg) = (POSE_TIERS_M[i], POSE_TIERS_DEG[i]);
        *slot = fraction(&|e| e.trans_m < m && e.rot_deg < deg);
    }
    Ok(MetricsReport {
        rmse_trans_m: rmse(|e| e.trans_m),
        rmse_rot_deg: rmse(|e| e.rot_deg),
        recall_trans,
        recall_pose,
        frame_count: errors.len(),
    })
}

pub fn write_frame_errors<W: Write>(mut out: W, errors: &[FrameError]) -> std::io::Result<()> {
    writeln!(out, "frame,err_trans_m,err_rot_deg")?;
    for (frame, e) in errors.iter().enumerate() {
        writeln!(out, "{},{},{}", frame, e.trans_m, e.rot_deg)?;
    }
    Ok(())
}
