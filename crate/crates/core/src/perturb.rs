//! Perturbations for robustness experiments: Gaussian position noise and
//! contact-preserving motion blending.

use std::collections::HashMap;

use ndarray::Array3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::forward_kinematics;
use crate::quat::*;
use crate::types::*;

pub const BLEND_WINDOW: usize = 80;

/// Adds i.i.d. zero-mean Gaussian noise of std `sigma_m` to every coordinate.
pub fn add_noise<R: Rng + ?Sized>(poses: &PoseSequence, sigma_m: f64, rng: &mut R) -> Result<PoseSequence> {
    if !(sigma_m >= 0.0 && sigma_m.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise sigma {sigma_m} m must be finite and nonnegative")));
    }
    let mut out = poses.clone();
    if sigma_m == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, sigma_m).expect("finite sigma");
    for v in out.positions.iter_mut() {
        *v = (*v as f64 + normal.sample(rng)) as f32;
    }
    Ok(out)
}

/// Window `[start, start + len)` of take `take`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Segment {
    pub take: usize,
    pub start: usize,
}

/// Two windows whose contact pattern agrees exactly on the flagged feet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BlendPair {
    pub a: Segment,
    pub b: Segment,
    pub len: usize,
    /// `[left, right]`.
    pub matched: [bool; 2],
}

fn foot_pattern(c: &ContactSequence, start: usize, len: usize, foot: usize) -> Vec<u8> {
    (start..start + len)
        .flat_map(|f| [c.labels[[f, foot, HEEL]], c.labels[[f, foot, TOE]]])
        .collect()
}

/// Pairs of distinct windows whose heel and toe labels match on every frame for
/// at least one foot. Output is sorted.
pub fn mine_blend_pairs(takes: &[Take], window: usize, stride: usize) -> Result<Vec<BlendPair>> {
    if window == 0 || stride == 0 {
        return Err(Error::InvalidArgument(format!(
            "blend window {window} and stride {stride} must be positive"
        )));
    }
    let mut groups: [HashMap<Vec<u8>, Vec<Segment>>; 2] = Default::default();
    for (ti, take) in takes.iter().enumerate() {
        let Some(c) = &take.contacts else {
            return Err(Error::InvalidArgument(format!("take {ti} has no contact labels")));
        };
        let n = c.frames().min(take.frames());
        if n < window {
            continue;
        }
        for start in (0..=n - window).step_by(stride) {
            let seg = Segment { take: ti, start };
            for (foot, g) in groups.iter_mut().enumerate() {
                g.entry(foot_pattern(c, start, window, foot)).or_default().push(seg);
            }
        }
    }
    let mut found: HashMap<(Segment, Segment), [bool; 2]> = HashMap::new();
    for (foot, g) in groups.iter().enumerate() {
        for segs in g.values() {
            for (i, &a) in segs.iter().enumerate() {
                for &b in &segs[i + 1..] {
                    found.entry((a.min(b), a.max(b))).or_default()[foot] = true;
                }
            }
        }
    }
    let mut pairs: Vec<BlendPair> = found
        .into_iter()
        .map(|((a, b), matched)| BlendPair {
            a,
            b,
            len: window,
            matched,
        })
        .collect();
    pairs.sort();
    Ok(pairs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlendSchedule {
    #[default]
    Smoothstep,
    Linear,
}

impl BlendSchedule {
    /// Weights rising from 0 at the first frame to 1 at the last.
    pub fn weights(self, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| {
                let u = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
                match self {
                    BlendSchedule::Linear => u,
                    BlendSchedule::Smoothstep => u * u * (3.0 - 2.0 * u),
                }
            })
            .collect()
    }
}

/// Per-frame blend: root translation lerped, local rotations slerped.
pub fn blend(a: &LocalMotion, b: &LocalMotion, weights: &[f64]) -> Result<LocalMotion> {
    let t = a.frames();
    if b.frames() != t || weights.len() != t {
        return Err(Error::Shape(format!(
            "blend needs equal lengths, got {t}, {} and {} weights",
            b.frames(),
            weights.len()
        )));
    }
    if b.joints() != a.joints() {
        return Err(Error::Shape(format!("blend joints {} vs {}", a.joints(), b.joints())));
    }
    if let Some(w) = weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
        return Err(Error::InvalidArgument(format!("blend weight {w} outside [0, 1]")));
    }
    let mut out = a.clone();
    for (f, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        if w == 1.0 {
            out.root_translation.row_mut(f).assign(&b.root_translation.row(f));
            for j in 0..a.joints() {
                for c in 0..4 {
                    out.rotations[[f, j, c]] = b.rotations[[f, j, c]];
                }
            }
            continue;
        }
        for c in 0..3 {
            let (x, y) = (a.root_translation[[f, c]] as f64, b.root_translation[[f, c]] as f64);
            out.root_translation[[f, c]] = (x + w * (y - x)) as f32;
        }
        for j in 0..a.joints() {
            out.set_rotation(f, j, a.rotation(f, j).slerp(b.rotation(f, j), w));
        }
    }
    Ok(out)
}

fn heading(q: Quat) -> f64 {
    let f = q.rotate([0.0, 0.0, 1.0]);
    f[0].atan2(f[2])
}

/// Moves `b` rigidly about the vertical axis so that its first frame shares the
/// root's horizontal position and heading with `a`'s first frame.
pub fn align_start(b: &LocalMotion, a: &LocalMotion) -> LocalMotion {
    let mut out = b.clone();
    if a.frames() == 0 || b.frames() == 0 {
        return out;
    }
    let yaw = Quat::from_yaw(heading(a.rotation(0, 0)) - heading(b.rotation(0, 0)));
    let (pa, pb) = (a.root(0), b.root(0));
    for f in 0..b.frames() {
        let r = b.root(f);
        let d = yaw.rotate([r[0] - pb[0], 0.0, r[2] - pb[2]]);
        out.root_translation[[f, 0]] = (pa[0] + d[0]) as f32;
        out.root_translation[[f, 2]] = (pa[2] + d[2]) as f32;
        out.set_rotation(f, 0, (yaw * b.rotation(f, 0)).normalized());
    }
    out
}

/// Blends the windows of a mined pair into a take. Feet whose patterns match
/// keep the shared labels; other feet are in contact only where both sources are.
pub fn blend_pair(takes: &[Take], pair: &BlendPair, schedule: BlendSchedule) -> Result<Take> {
    let get = |s: Segment| -> Result<(&Take, LocalMotion, ContactSequence)> {
        let take = takes
            .get(s.take)
            .ok_or_else(|| Error::InvalidArgument(format!("blend pair refers to missing take {}", s.take)))?;
        let motion = take
            .local_motion
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("take {} has no joint rotations", s.take)))?;
        let contacts = take
            .contacts
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("take {} has no contact labels", s.take)))?;
        if s.start + pair.len > motion.frames().min(contacts.frames()) {
            return Err(Error::InvalidArgument(format!(
                "window {}..{} exceeds take {}",
                s.start,
                s.start + pair.len,
                s.take
            )));
        }
        Ok((take, motion.window(s.start, pair.len), contacts.window(s.start, pair.len)))
    };
    let (ta, ma, ca) = get(pair.a)?;
    let (tb, mb, cb) = get(pair.b)?;
    if ta.skeleton.parents != tb.skeleton.parents {
        return Err(Error::Shape("blend sources have different skeleton topologies".into()));
    }
    let mb = align_start(&mb, &ma);
    let motion = blend(&ma, &mb, &schedule.weights(pair.len))?;
    let poses = forward_kinematics(&ta.skeleton, &motion)?;
    let labels = Array3::from_shape_fn((pair.len, 2, 2), |(f, foot, loc)| {
        if pair.matched[foot] {
            ca.labels[[f, foot, loc]]
        } else {
            ca.labels[[f, foot, loc]] & cb.labels[[f, foot, loc]]
        }
    });
    Ok(Take {
        skeleton: ta.skeleton.clone(),
        local_motion: Some(motion),
        poses,
        pressure: None,
        vgrf: None,
        contacts: Some(ContactSequence {
            labels,
            rate_hz: ca.rate_hz,
        }),
        imu: None,
        meta: ta.meta.clone(),
        original_poses: None,
        layout: ta.layout.clone(),
        contact_params: ta.contact_params.clone(),
        synchronized: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::footskate;
    use crate::rng;
    use crate::synth::{generate_blend_ground_truth, generate_gait, GaitConfig};

    fn gait(seed: u64, secs: f64) -> Take {
        generate_gait(&GaitConfig {
            duration_s: secs,
            seed,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn zero_noise_is_identity_and_seeded() {
        let take = gait(0, 4.0);
        assert_eq!(add_noise(&take.poses, 0.0, &mut rng::seeded(1)).unwrap(), take.poses);
        let a = add_noise(&take.poses, 0.02, &mut rng::seeded(1)).unwrap();
        let b = add_noise(&take.poses, 0.02, &mut rng::seeded(1)).unwrap();
        assert_eq!(a, b);
        assert!(add_noise(&take.poses, -1.0, &mut rng::seeded(1)).is_err());
    }

    #[test]
    fn noise_has_requested_std_and_zero_mean() {
        let poses = PoseSequence {
            positions: Array3::zeros((1000, 10, 10)),
            rate_hz: 100.0,
        };
        let out = add_noise(&poses, 0.02, &mut rng::seeded(7)).unwrap();
        let n = out.positions.len() as f64;
        let mean = out.positions.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = out.positions.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((0.019..=0.021).contains(&var.sqrt()), "std {}", var.sqrt());
        assert!(mean.abs() < 3.0 * 0.02 / n.sqrt(), "mean {mean}");
    }

    #[test]
    fn blend_endpoints_and_idempotence() {
        let take = gait(2, 4.0);
        let a = take.local_motion.as_ref().unwrap().window(0, 80);
        let b = take.local_motion.as_ref().unwrap().window(100, 80);
        assert_eq!(blend(&a, &b, &[0.0; 80]).unwrap(), a);
        assert_eq!(blend(&a, &b, &[1.0; 80]).unwrap(), b);
        let w = BlendSchedule::Smoothstep.weights(80);
        let same = blend(&a, &a, &w).unwrap();
        for f in 0..80 {
            for j in 0..a.joints() {
                let (p, q) = (same.rotation(f, j), a.rotation(f, j));
                assert!(p.angle_to(q) < 1e-3, "{f} {j}");
                assert!((p.norm() - 1.0).abs() < 1e-6);
            }
        }
        let mixed = blend(&a, &b, &w).unwrap();
        for f in 0..80 {
            for j in 0..a.joints() {
                assert!((mixed.rotation(f, j).norm() - 1.0).abs() < 1e-6);
            }
        }
        assert!(blend(&a, &b.window(0, 79), &w).is_err());
        assert!(blend(&a, &b, &[1.5; 80]).is_err());
    }

    #[test]
    fn schedules_span_zero_to_one() {
        for s in [BlendSchedule::Linear, BlendSchedule::Smoothstep] {
            let w = s.weights(80);
            assert_eq!((w[0], w[79]), (0.0, 1.0));
            assert!(w.windows(2).all(|p| p[1] >= p[0]));
        }
        assert_eq!(BlendSchedule::Smoothstep.weights(3)[1], 0.5);
    }

    #[test]
    fn shared_schedule_pairs_every_aligned_window() {
        let cfg = GaitConfig {
            duration_s: 8.0,
            ..Default::default()
        };
        let (a, b) = generate_blend_ground_truth(&cfg, &mut rng::seeded(3)).unwrap();
        let takes = vec![a, b];
        let pairs = mine_blend_pairs(&takes, 80, 40).unwrap();
        let windows = (takes[0].frames() - 80) / 40 + 1;
        for s in 0..windows {
            let start = s * 40;
            let want = (Segment { take: 0, start }, Segment { take: 1, start });
            let hit = pairs.iter().find(|p| (p.a, p.b) == want).expect("aligned pair");
            assert_eq!(hit.matched, [true, true]);
        }
        for p in &pairs {
            let (ca, cb) = (
                takes[p.a.take].contacts.as_ref().unwrap(),
                takes[p.b.take].contacts.as_ref().unwrap(),
            );
            assert!(p.a != p.b);
            for foot in 0..2 {
                let same = foot_pattern(ca, p.a.start, 80, foot) == foot_pattern(cb, p.b.start, 80, foot);
                assert_eq!(same, p.matched[foot]);
            }
        }
        assert!(pairs.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn uncorrelated_schedules_rarely_pair() {
        let takes: Vec<Take> = (0..4)
            .map(|s| {
                generate_gait(&GaitConfig {
                    duration_s: 8.0,
                    cycle_s: 1.013 + 0.061 * s as f64,
                    seed: 10 + s,
                    ..Default::default()
                })
                .unwrap()
            })
            .collect();
        let pairs = mine_blend_pairs(&takes, 80, 40).unwrap();
        let cfg = GaitConfig {
            duration_s: 8.0,
            ..Default::default()
        };
        let aligned: Vec<Take> = (0..2)
            .flat_map(|s| {
                let (a, b) = generate_blend_ground_truth(&cfg, &mut rng::seeded(s)).unwrap();
                [a, b]
            })
            .collect();
        let reference = mine_blend_pairs(&aligned, 80, 40).unwrap();
        assert!(pairs.len() * 5 < reference.len(), "{} vs {}", pairs.len(), reference.len());
    }

    #[test]
    fn blending_different_speeds_creates_footskate() {
        let cfg = GaitConfig {
            duration_s: 8.0,
            ..Default::default()
        };
        let (a, b) = generate_blend_ground_truth(&cfg, &mut rng::seeded(5)).unwrap();
        let clean = footskate(&a.poses, a.contacts.as_ref().unwrap(), &a.skeleton).unwrap();
        let takes = vec![a, b];
        let pair = BlendPair {
            a: Segment { take: 0, start: 200 },
            b: Segment { take: 1, start: 200 },
            len: 80,
            matched: [true, true],
        };
        let blended = blend_pair(&takes, &pair, BlendSchedule::Smoothstep).unwrap();
        let skate = footskate(&blended.poses, blended.contacts.as_ref().unwrap(), &blended.skeleton).unwrap();
        assert!(skate > 5.0 * clean.max(1e-3), "blend {skate} clean {clean}");
    }
}
