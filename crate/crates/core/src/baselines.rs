//! Optimal-thresholds contact detector: foot height above ground and speed
//! below two thresholds, fitted by recursive grid search on F1.

use ndarray::Array3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::joint_velocities;
use crate::types::{ContactSequence, PoseSequence, Skeleton, Take, HEEL, LEFT, RIGHT, TOE};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OtThresholds {
    pub height_m: f64,
    pub speed_mps: f64,
    /// Ground height the heights are measured from.
    pub ground_y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OtSearch {
    pub height_range: [f64; 2],
    pub speed_range: [f64; 2],
    pub grid: usize,
    pub levels: usize,
}

impl Default for OtSearch {
    fn default() -> Self {
        OtSearch {
            height_range: [0.0, 0.30],
            speed_range: [0.0, 2.0],
            grid: 17,
            levels: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OtFit {
    pub thresholds: OtThresholds,
    pub f1: f64,
    /// Best F1 after each refinement level.
    pub level_f1: Vec<f64>,
}

/// 1st percentile of both ankle joints' heights, linearly interpolated.
pub fn ground_height(poses: &PoseSequence, skeleton: &Skeleton) -> f64 {
    let fj = skeleton.foot_joints;
    let mut h: Vec<f64> = (0..poses.frames())
        .flat_map(|t| [fj.left_ankle, fj.right_ankle].map(|j| poses.positions[[t, j, 1]] as f64))
        .collect();
    if h.is_empty() {
        return 0.0;
    }
    h.sort_by(f64::total_cmp);
    let pos = 0.01 * (h.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(h.len() - 1);
    h[lo] + (pos - lo as f64) * (h[hi] - h[lo])
}

/// Height above `ground_y` and speed, `T×2×2` each, for the heel (ankle) and
/// toe joints.
fn features(poses: &PoseSequence, skeleton: &Skeleton, ground_y: f64) -> Result<(Array3<f64>, Array3<f64>)> {
    let t = poses.frames();
    if t < 3 {
        return Err(Error::InvalidArgument(format!(
            "thresholding needs at least 3 frames for velocities, got {t}"
        )));
    }
    let vel = joint_velocities(poses)?;
    let mut height = Array3::zeros((t, 2, 2));
    let mut speed = Array3::zeros((t, 2, 2));
    for f in 0..t {
        for foot in [LEFT, RIGHT] {
            for loc in [HEEL, TOE] {
                let j = skeleton.foot_joints.get(foot, loc);
                height[[f, foot, loc]] = poses.positions[[f, j, 1]] as f64 - ground_y;
                let v = [vel[[f, j, 0]], vel[[f, j, 1]], vel[[f, j, 2]]];
                speed[[f, foot, loc]] = crate::quat::norm3(v);
            }
        }
    }
    Ok((height, speed))
}

pub fn apply_ot(poses: &PoseSequence, skeleton: &Skeleton, thr: &OtThresholds) -> Result<ContactSequence> {
    let (h, s) = features(poses, skeleton, thr.ground_y)?;
    let labels = ndarray::Zip::from(&h)
        .and(&s)
        .map_collect(|&h, &s| u8::from(h < thr.height_m && s < thr.speed_mps));
    Ok(ContactSequence {
        labels,
        rate_hz: poses.rate_hz,
    })
}

/// `apply_ot` with the ground re-estimated from `poses`.
pub fn apply_ot_to_take(poses: &PoseSequence, skeleton: &Skeleton, thr: &OtThresholds) -> Result<ContactSequence> {
    let thr = OtThresholds {
        ground_y: ground_height(poses, skeleton),
        ..*thr
    };
    apply_ot(poses, skeleton, &thr)
}

/// Flattened height, speed and truth over every (frame, foot, location).
struct Samples {
    height: Vec<f64>,
    speed: Vec<f64>,
    truth: Vec<bool>,
    positives: usize,
}

impl Samples {
    fn f1(&self, h: f64, s: f64) -> f64 {
        let (mut tp, mut pp) = (0usize, 0usize);
        for i in 0..self.height.len() {
            if self.height[i] < h && self.speed[i] < s {
                pp += 1;
                tp += usize::from(self.truth[i]);
            }
        }
        f1_from_counts(tp, pp, self.positives)
    }
}

pub(crate) fn f1_from_counts(tp: usize, predicted: usize, actual: usize) -> f64 {
    if predicted == 0 && actual == 0 {
        return 1.0;
    }
    if tp == 0 {
        return 0.0;
    }
    let p = tp as f64 / predicted as f64;
    let r = tp as f64 / actual as f64;
    2.0 * p * r / (p + r)
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Higher F1 wins; ties go to the smaller height, then the smaller speed.
fn better(a: (f64, f64, f64), b: (f64, f64, f64)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && (a.1, a.2) < (b.1, b.2))
}

pub fn fit_ot(takes: &[Take], search: &OtSearch) -> Result<OtFit> {
    if takes.is_empty() {
        return Err(Error::InvalidArgument("OT fitting needs at least one take".into()));
    }
    let mut samples = Samples {
        height: Vec::new(),
        speed: Vec::new(),
        truth: Vec::new(),
        positives: 0,
    };
    let mut grounds = Vec::new();
    for take in takes {
        let truth = take
            .contacts
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("OT fitting needs takes with contacts".into()))?;
        if truth.frames() != take.frames() {
            return Err(Error::Shape("contacts and poses differ in length".into()));
        }
        let g = ground_height(&take.poses, &take.skeleton);
        grounds.push(g);
        let (h, s) = features(&take.poses, &take.skeleton, g)?;
        samples.height.extend(h.iter());
        samples.speed.extend(s.iter());
        samples.truth.extend(truth.labels.iter().map(|&v| v != 0));
    }
    samples.positives = samples.truth.iter().filter(|&&v| v).count();
    if samples.positives == 0 {
        log::warn!("OT fit: ground truth has no contacts, thresholds are degenerate");
    }
    grounds.sort_by(f64::total_cmp);
    let ground_y = grounds[grounds.len() / 2];

    let n = search.grid.max(2);
    let (mut hr, mut sr) = (search.height_range, search.speed_range);
    let mut best: Option<(f64, f64, f64)> = None;
    let mut level_f1 = Vec::new();
    for _ in 0..search.levels.max(1) {
        let hs = linspace(hr[0], hr[1], n);
        let ss = linspace(sr[0], sr[1], n);
        let grid: Vec<(f64, f64)> = hs.iter().flat_map(|&h| ss.iter().map(move |&s| (h, s))).collect();
        let scored: Vec<(f64, f64, f64)> = grid.par_iter().map(|&(h, s)| (samples.f1(h, s), h, s)).collect();
        for c in scored {
            if best.is_none_or(|b| better(c, b)) {
                best = Some(c);
            }
        }
        let b = best.expect("grid is nonempty");
        level_f1.push(b.0);
        let dh = (hr[1] - hr[0]) / (n - 1) as f64;
        let ds = (sr[1] - sr[0]) / (n - 1) as f64;
        hr = [(b.1 - dh).max(0.0), b.1 + dh];
        sr = [(b.2 - ds).max(0.0), b.2 + ds];
    }
    let (f1, h, s) = best.expect("at least one level");
    Ok(OtFit {
        thresholds: OtThresholds {
            height_m: h,
            speed_mps: s,
            ground_y,
        },
        f1,
        level_f1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::f1;
    use crate::kinematics::{apply_rigid, RigidTransform};
    use crate::quat::Quat;
    use crate::synth::{generate_gait, GaitConfig};

    fn take(seed: u64) -> Take {
        generate_gait(&GaitConfig {
            duration_s: 12.0,
            seed,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn stationary_and_lifted_feet() {
        let t = take(0);
        let mut poses = t.poses.window(0, 10);
        for f in 0..10 {
            for j in 0..poses.joints() {
                for c in 0..3 {
                    poses.positions[[f, j, c]] = t.poses.positions[[0, j, c]];
                }
            }
        }
        let fj = t.skeleton.foot_joints;
        let thr = OtThresholds {
            height_m: 0.05,
            speed_mps: 0.1,
            ground_y: 0.0,
        };
        let c = apply_ot(&poses, &t.skeleton, &thr).unwrap();
        for foot in 0..2 {
            for loc in 0..2 {
                let j = fj.get(foot, loc);
                let grounded = poses.positions[[0, j, 1]] < 0.05;
                assert_eq!(c.labels[[5, foot, loc]] == 1, grounded);
            }
        }
        let high = OtThresholds { ground_y: -1.0, ..thr };
        assert!(apply_ot(&poses, &t.skeleton, &high).unwrap().labels.iter().all(|&v| v == 0));
        assert!(apply_ot(&poses.window(0, 2), &t.skeleton, &thr).is_err());
    }

    #[test]
    fn generous_thresholds_track_synthetic_gait() {
        let t = take(1);
        let thr = OtThresholds {
            height_m: 0.1,
            speed_mps: 0.5,
            ground_y: ground_height(&t.poses, &t.skeleton),
        };
        let c = apply_ot(&t.poses, &t.skeleton, &thr).unwrap();
        let s = f1(&c, t.contacts.as_ref().unwrap()).unwrap();
        assert!(s.f1 >= 0.85, "{s:?}");
    }

    #[test]
    fn planted_thresholds_are_recovered() {
        let mut t = take(2);
        let g = ground_height(&t.poses, &t.skeleton);
        let planted = OtThresholds {
            height_m: 0.05,
            speed_mps: 0.25,
            ground_y: g,
        };
        t.contacts = Some(apply_ot(&t.poses, &t.skeleton, &planted).unwrap());
        let fit = fit_ot(std::slice::from_ref(&t), &OtSearch::default()).unwrap();
        assert_eq!(fit.f1, 1.0);
        let c = apply_ot(&t.poses, &t.skeleton, &fit.thresholds).unwrap();
        assert_eq!(f1(&c, t.contacts.as_ref().unwrap()).unwrap().f1, 1.0);
        assert!(fit.level_f1.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn fitted_f1_dominates_level_zero_grid() {
        let t = take(3);
        let fit = fit_ot(std::slice::from_ref(&t), &OtSearch::default()).unwrap();
        let truth = t.contacts.as_ref().unwrap();
        for h in linspace(0.0, 0.3, 17) {
            for s in linspace(0.0, 2.0, 17) {
                let thr = OtThresholds {
                    height_m: h,
                    speed_mps: s,
                    ground_y: fit.thresholds.ground_y,
                };
                let c = apply_ot(&t.poses, &t.skeleton, &thr).unwrap();
                assert!(f1(&c, truth).unwrap().f1 <= fit.f1 + 1e-12);
            }
        }
        assert!(fit.f1 >= 0.9, "{fit:?}");
    }

    #[test]
    fn empty_truth_gives_zero_thresholds() {
        let mut t = take(4);
        t.contacts = Some(ContactSequence::zeros(t.frames(), t.rate_hz()));
        let fit = fit_ot(&[t], &OtSearch::default()).unwrap();
        assert_eq!((fit.thresholds.height_m, fit.thresholds.speed_mps), (0.0, 0.0));
        assert!(fit_ot(&[], &OtSearch::default()).is_err());
    }

    #[test]
    fn invariant_to_yaw_and_horizontal_shift() {
        let t = take(5);
        let thr = OtThresholds {
            height_m: 0.08,
            speed_mps: 0.4,
            ground_y: 0.0,
        };
        let base = apply_ot(&t.poses, &t.skeleton, &thr).unwrap();
        let xf = RigidTransform {
            rotation: Quat::from_yaw(1.1),
            translation: [3.0, 0.0, -2.0],
            scale: 1.0,
        };
        let moved = apply_ot(&apply_rigid(&t.poses, &xf), &t.skeleton, &thr).unwrap();
        let diff = base.labels.iter().zip(moved.labels.iter()).filter(|(a, b)| a != b).count();
        // Only f32 rounding of the moved coordinates can flip a label.
        assert!(diff <= base.labels.len() / 2000, "{diff}");
    }
}
