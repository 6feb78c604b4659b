//! SPEED+-style pose scoring: per-sample errors, calibration thresholds and
//! dataset aggregates. Angles are radians throughout; degrees only appear in
//! the exported report.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{quat_angular_error, Pose};

/// Rotation errors below this many radians count as perfect.
pub const ROTATION_THRESHOLD_RAD: f64 = 0.00295;
/// Normalized translation errors below 2.173 mm/m count as perfect.
pub const TRANSLATION_THRESHOLD: f64 = 2.173e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseErrors {
    /// Translation error in meters.
    pub e_t: f64,
    /// Translation error relative to the ground-truth distance.
    pub e_t_norm: f64,
    /// Rotation error in radians.
    pub e_q: f64,
    pub e_q_star: f64,
    pub e_t_norm_star: f64,
}

impl PoseErrors {
    /// Per-sample contribution to the SPEED+ score.
    pub fn score(&self) -> f64 {
        self.e_t_norm_star + self.e_q_star
    }
}

pub fn pose_errors(pred: &Pose, gt: &Pose) -> Result<PoseErrors> {
    let gt_norm = gt.t.norm();
    if !(gt_norm > 0.0) {
        return Err(Error::InvalidGroundTruth("ground-truth position has zero norm"));
    }
    let e_t = (pred.t - gt.t).norm();
    let e_t_norm = e_t / gt_norm;
    let e_q = quat_angular_error(pred.q, gt.q);
    let (e_q_star, e_t_norm_star) = apply_thresholds(e_q, e_t_norm);
    Ok(PoseErrors { e_t, e_t_norm, e_q, e_q_star, e_t_norm_star })
}

/// Zeroes errors that fall strictly below the calibration thresholds.
pub fn apply_thresholds(e_q: f64, e_t_norm: f64) -> (f64, f64) {
    let e_q_star = if e_q < ROTATION_THRESHOLD_RAD { 0.0 } else { e_q };
    let e_t_star = if e_t_norm < TRANSLATION_THRESHOLD { 0.0 } else { e_t_norm };
    (e_q_star, e_t_star)
}

/// Dataset-level summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreReport {
    /// Mean translation error, meters.
    pub e_t_mean: f64,
    /// Mean rotation error, radians.
    pub e_r_mean: f64,
    pub s_p_star: f64,
    pub n: usize,
    pub median_e_t: f64,
    /// Median rotation error, radians.
    pub median_e_q: f64,
}

/// JSON shape of a [`ScoreReport`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct ScoreReportJson {
    pub E_T_m: f64,
    pub E_R_rad: f64,
    pub E_R_deg: f64,
    pub S_P_star: f64,
    pub N: usize,
    pub median_e_t_m: f64,
    pub median_e_q_deg: f64,
}

impl ScoreReport {
    pub fn e_r_deg(&self) -> f64 {
        self.e_r_mean.to_degrees()
    }

    pub fn to_json(&self) -> ScoreReportJson {
        ScoreReportJson {
            E_T_m: self.e_t_mean,
            E_R_rad: self.e_r_mean,
            E_R_deg: self.e_r_deg(),
            S_P_star: self.s_p_star,
            N: self.n,
            median_e_t_m: self.median_e_t,
            median_e_q_deg: self.median_e_q.to_degrees(),
        }
    }
}

/// Neumaier-compensated mean, so that splitting the input and recombining the
/// weighted partial means agrees to within rounding of the final division.
fn compensated_mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    let mut n = 0usize;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
        n += 1;
    }
    (sum + comp) / n as f64
}

/// Lower median (element `(n - 1) / 2` of the sorted values).
pub fn lower_median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted[(sorted.len() - 1) / 2]
}

pub fn aggregate(errors: &[PoseErrors]) -> Result<ScoreReport> {
    if errors.is_empty() {
        return Err(Error::EmptySet("cannot aggregate an empty error list"));
    }
    let e_t: Vec<f64> = errors.iter().map(|e| e.e_t).collect();
    let e_q: Vec<f64> = errors.iter().map(|e| e.e_q).collect();
    Ok(ScoreReport {
        e_t_mean: compensated_mean(e_t.iter().copied()),
        e_r_mean: compensated_mean(e_q.iter().copied()),
        s_p_star: compensated_mean(errors.iter().map(PoseErrors::score)),
        n: errors.len(),
        median_e_t: lower_median(&e_t),
        median_e_q: lower_median(&e_q),
    })
}
