//! Contact and force metrics.

use serde::{Deserialize, Serialize};

use crate::baselines::f1_from_counts;
use crate::error::{Error, Result};
use crate::grf::center_of_pressure;
use crate::kinematics::joint_velocities;
use crate::types::{ContactSequence, InsoleLayout, PoseSequence, Skeleton, VgrfSequence, CELLS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Score {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

impl F1Score {
    /// Both sets empty counts as perfect agreement.
    pub fn from_counts(tp: usize, predicted: usize, actual: usize) -> Self {
        let ratio = |n: usize, d: usize| if d == 0 { f64::from(u8::from(n == 0)) } else { n as f64 / d as f64 };
        let (precision, recall) = if predicted == 0 && actual == 0 {
            (1.0, 1.0)
        } else {
            (ratio(tp, predicted), ratio(tp, actual))
        };
        F1Score {
            f1: f1_from_counts(tp, predicted, actual),
            precision: if predicted == 0 && actual > 0 { 0.0 } else { precision },
            recall: if actual == 0 && predicted > 0 { 0.0 } else { recall },
        }
    }
}

fn same_shape(pred: &ContactSequence, truth: &ContactSequence) -> Result<()> {
    if pred.labels.dim() != truth.labels.dim() {
        return Err(Error::Shape(format!(
            "contact shapes {:?} and {:?} differ",
            pred.labels.dim(),
            truth.labels.dim()
        )));
    }
    Ok(())
}

pub fn f1(pred: &ContactSequence, truth: &ContactSequence) -> Result<F1Score> {
    same_shape(pred, truth)?;
    let (mut tp, mut pp, mut ap) = (0, 0, 0);
    for (&p, &t) in pred.labels.iter().zip(truth.labels.iter()) {
        let (p, t) = (p != 0, t != 0);
        tp += usize::from(p && t);
        pp += usize::from(p);
        ap += usize::from(t);
    }
    Ok(F1Score::from_counts(tp, pp, ap))
}

/// Micro-averaged F1 over several (prediction, truth) pairs.
pub fn f1_micro<'a>(pairs: impl IntoIterator<Item = (&'a ContactSequence, &'a ContactSequence)>) -> Result<F1Score> {
    let (mut tp, mut pp, mut ap) = (0, 0, 0);
    for (pred, truth) in pairs {
        same_shape(pred, truth)?;
        for (&p, &t) in pred.labels.iter().zip(truth.labels.iter()) {
            let (p, t) = (p != 0, t != 0);
            tp += usize::from(p && t);
            pp += usize::from(p);
            ap += usize::from(t);
        }
    }
    Ok(F1Score::from_counts(tp, pp, ap))
}

/// Whether channel `(foot, loc)` of `labels` has a positive within `k` frames of `t`.
fn near(labels: &ContactSequence, t: usize, foot: usize, loc: usize, k: usize) -> bool {
    let n = labels.frames();
    let lo = t.saturating_sub(k);
    let hi = (t + k).min(n - 1);
    (lo..=hi).any(|s| labels.labels[[s, foot, loc]] != 0)
}

/// F1 where a positive counts as matched when the other sequence has a
/// positive of the same channel within `k` frames, for `k = 0..=max_tol`.
pub fn f1_tolerance_curve(pred: &ContactSequence, truth: &ContactSequence, max_tol: usize) -> Result<Vec<F1Score>> {
    same_shape(pred, truth)?;
    let n = pred.frames();
    (0..=max_tol)
        .map(|k| {
            let (mut matched_pred, mut pp, mut matched_truth, mut ap) = (0, 0, 0, 0);
            for t in 0..n {
                for foot in 0..2 {
                    for loc in 0..2 {
                        if pred.labels[[t, foot, loc]] != 0 {
                            pp += 1;
                            matched_pred += usize::from(near(truth, t, foot, loc, k));
                        }
                        if truth.labels[[t, foot, loc]] != 0 {
                            ap += 1;
                            matched_truth += usize::from(near(pred, t, foot, loc, k));
                        }
                    }
                }
            }
            let precision = if pp == 0 { f64::from(u8::from(ap == 0)) } else { matched_pred as f64 / pp as f64 };
            let recall = if ap == 0 { f64::from(u8::from(pp == 0)) } else { matched_truth as f64 / ap as f64 };
            let f1 = if pp == 0 && ap == 0 {
                1.0
            } else if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            Ok(F1Score { f1, precision, recall })
        })
        .collect()
}

/// False-positive rate per bin of normalized position inside the true
/// off-contact runs.
pub fn offcontact_fp_profile(pred: &ContactSequence, truth: &ContactSequence, bins: usize) -> Result<Vec<f64>> {
    same_shape(pred, truth)?;
    if bins == 0 {
        return Err(Error::InvalidArgument("profile needs at least one bin".into()));
    }
    let n = truth.frames();
    let mut frames = vec![0usize; bins];
    let mut fps = vec![0usize; bins];
    for foot in 0..2 {
        for loc in 0..2 {
            let mut t = 0;
            while t < n {
                if truth.labels[[t, foot, loc]] != 0 {
                    t += 1;
                    continue;
                }
                let start = t;
                while t < n && truth.labels[[t, foot, loc]] == 0 {
                    t += 1;
                }
                let len = t - start;
                for s in start..t {
                    let u = (s - start) as f64 + 0.5;
                    let b = ((u / len as f64 * bins as f64) as usize).min(bins - 1);
                    frames[b] += 1;
                    fps[b] += usize::from(pred.labels[[s, foot, loc]] != 0);
                }
            }
        }
    }
    if frames.iter().all(|&c| c == 0) {
        return Err(Error::InvalidArgument("ground truth has no off-contact phase".into()));
    }
    Ok(fps
        .iter()
        .zip(&frames)
        .map(|(&f, &c)| if c == 0 { 0.0 } else { f as f64 / c as f64 })
        .collect())
}

fn same_vgrf_shape(a: &VgrfSequence, b: &VgrfSequence) -> Result<()> {
    if a.values.dim() != b.values.dim() {
        return Err(Error::Shape(format!(
            "vGRF shapes {:?} and {:?} differ",
            a.values.dim(),
            b.values.dim()
        )));
    }
    Ok(())
}

/// Per-foot RMSE of the total vGRF, body-weight fractions.
pub fn vgrf_rmse(pred: &VgrfSequence, truth: &VgrfSequence) -> Result<[f64; 2]> {
    same_vgrf_shape(pred, truth)?;
    let n = pred.frames();
    if n == 0 {
        return Err(Error::InvalidArgument("empty vGRF sequence".into()));
    }
    let mut out = [0.0; 2];
    for (foot, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for t in 0..n {
            let sum = |v: &VgrfSequence| (0..CELLS).map(|c| v.values[[t, foot, c]] as f64).sum::<f64>();
            acc += (sum(pred) - sum(truth)).powi(2);
        }
        *o = (acc / n as f64).sqrt();
    }
    Ok(out)
}

/// Per-foot median distance between predicted and true centers of pressure,
/// millimeters, over frames where both exist.
pub fn cop_mad(pred: &VgrfSequence, truth: &VgrfSequence, layout: &InsoleLayout, gate_bw: f64) -> Result<[f64; 2]> {
    same_vgrf_shape(pred, truth)?;
    let a = center_of_pressure(pred, layout, gate_bw);
    let b = center_of_pressure(truth, layout, gate_bw);
    let mut out = [0.0; 2];
    for (foot, o) in out.iter_mut().enumerate() {
        let mut d: Vec<f64> = a
            .iter()
            .zip(&b)
            .filter_map(|(p, q)| match (p[foot], q[foot]) {
                (Some(p), Some(q)) => Some(1000.0 * (p[0] - q[0]).hypot(p[1] - q[1])),
                _ => None,
            })
            .collect();
        if d.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "foot {foot}: no frame has both centers of pressure"
            )));
        }
        d.sort_by(f64::total_cmp);
        let m = d.len();
        *o = if m % 2 == 1 {
            d[m / 2]
        } else {
            0.5 * (d[m / 2 - 1] + d[m / 2])
        };
    }
    Ok(out)
}

/// Mean horizontal speed of the contact joints over labeled frames, m/s.
pub fn footskate(poses: &PoseSequence, contacts: &ContactSequence, skeleton: &Skeleton) -> Result<f64> {
    if contacts.frames() != poses.frames() {
        return Err(Error::Shape(format!(
            "{} contact frames for {} pose frames",
            contacts.frames(),
            poses.frames()
        )));
    }
    let vel = joint_velocities(poses)?;
    let (mut sum, mut count) = (0.0, 0usize);
    for t in 0..poses.frames() {
        for foot in 0..2 {
            for loc in 0..2 {
                if contacts.labels[[t, foot, loc]] != 0 {
                    let j = skeleton.foot_joints.get(foot, loc);
                    sum += vel[[t, j, 0]].hypot(vel[[t, j, 2]]);
                    count += 1;
                }
            }
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}
