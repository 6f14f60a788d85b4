//! Forward kinematics, numerical differentiation, rigid transforms, mirroring
//! and multi-rate resampling.

use ndarray::{Array2, Array3, ArrayView2, ArrayView3};

use crate::error::{Error, Result};
use crate::quat::{add3, Quat};
use crate::types::{LocalMotion, PoseSequence, Skeleton};

/// Similarity transform `p' = scale · (R p) + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Quat,
    pub translation: [f64; 3],
    pub scale: f64,
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        rotation: Quat::IDENTITY,
        translation: [0.0; 3],
        scale: 1.0,
    };

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let r = self.rotation.rotate(p);
        [
            self.scale * r[0] + self.translation[0],
            self.scale * r[1] + self.translation[1],
            self.scale * r[2] + self.translation[2],
        ]
    }
}

/// Global joint rotations and positions of one frame.
pub fn fk_frame(skeleton: &Skeleton, motion: &LocalMotion, t: usize) -> (Vec<Quat>, Vec<[f64; 3]>) {
    let j = skeleton.num_joints();
    let mut rot = Vec::with_capacity(j);
    let mut pos = Vec::with_capacity(j);
    for k in 0..j {
        let local = motion.rotation(t, k);
        match skeleton.parent(k) {
            None => {
                rot.push(local);
                pos.push(motion.root(t));
            }
            Some(p) => {
                let pr: Quat = rot[p];
                pos.push(add3(pos[p], pr.rotate(skeleton.offset(k))));
                rot.push(pr * local);
            }
        }
    }
    (rot, pos)
}

pub fn forward_kinematics(skeleton: &Skeleton, motion: &LocalMotion) -> Result<PoseSequence> {
    let j = skeleton.num_joints();
    if motion.joints() != j {
        return Err(Error::Shape(format!(
            "motion has {} joints, skeleton {j}",
            motion.joints()
        )));
    }
    let frames = motion.frames();
    let mut positions = Array3::<f32>::zeros((frames, j, 3));
    for t in 0..frames {
        let (_, pos) = fk_frame(skeleton, motion, t);
        for (k, p) in pos.iter().enumerate() {
            for c in 0..3 {
                positions[[t, k, c]] = p[c] as f32;
            }
        }
    }
    Ok(PoseSequence {
        positions,
        rate_hz: motion.rate_hz,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffOrder {
    First,
    Second,
}

/// Central differences along time with one-sided differences at both ends.
pub fn finite_difference(series: ArrayView2<f64>, order: DiffOrder, rate_hz: f64) -> Result<Array2<f64>> {
    let (t, d) = series.dim();
    if t < 3 {
        return Err(Error::InvalidArgument(format!(
            "finite differences need at least 3 frames, got {t}"
        )));
    }
    let mut out = Array2::zeros((t, d));
    for i in 0..t {
        for c in 0..d {
            let x = |k: usize| series[[k, c]];
            out[[i, c]] = match order {
                DiffOrder::First => {
                    if i == 0 {
                        (x(1) - x(0)) * rate_hz
                    } else if i == t - 1 {
                        (x(t - 1) - x(t - 2)) * rate_hz
                    } else {
                        (x(i + 1) - x(i - 1)) * rate_hz * 0.5
                    }
                }
                DiffOrder::Second => {
                    let m = i.clamp(1, t - 2);
                    (x(m + 1) - 2.0 * x(m) + x(m - 1)) * rate_hz * rate_hz
                }
            };
        }
    }
    Ok(out)
}

/// Per-joint velocities `T×J×3` of a pose sequence.
pub fn joint_velocities(poses: &PoseSequence) -> Result<Array3<f64>> {
    let (t, j, _) = poses.positions.dim();
    let flat = poses
        .positions
        .mapv(|v| v as f64)
        .into_shape_with_order((t, j * 3))
        .expect("contiguous");
    let v = finite_difference(flat.view(), DiffOrder::First, poses.rate_hz)?;
    Ok(v.into_shape_with_order((t, j, 3)).expect("contiguous"))
}

/// Number of frames produced when resampling `frames` samples from `src_hz` to `dst_hz`.
pub fn resampled_len(frames: usize, src_hz: f64, dst_hz: f64) -> usize {
    if frames == 0 {
        return 0;
    }
    // tolerance absorbs representation error in exact ratios such as 240/100
    ((frames - 1) as f64 * dst_hz / src_hz + 1e-9).floor() as usize + 1
}

fn check_rates(frames: usize, src_hz: f64, dst_hz: f64) -> Result<()> {
    if !(src_hz > 0.0 && dst_hz > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "rates must be positive, got {src_hz} -> {dst_hz}"
        )));
    }
    if src_hz != dst_hz && frames < 2 {
        return Err(Error::InvalidArgument(
            "resampling needs at least 2 frames".into(),
        ));
    }
    Ok(())
}

/// Source bracket `(i, frac)` for output sample `k`.
fn bracket(k: usize, frames: usize, src_hz: f64, dst_hz: f64) -> (usize, f64) {
    let u = k as f64 * src_hz / dst_hz;
    let i = (u.floor() as usize).min(frames - 1);
    if i >= frames - 1 {
        return (frames - 1, 0.0);
    }
    (i, u - i as f64)
}

/// Linear interpolation of a `T×D` series at timestamps `k / dst_hz`.
pub fn resample_positions(series: ArrayView2<f32>, src_hz: f64, dst_hz: f64) -> Result<Array2<f32>> {
    let (frames, d) = series.dim();
    check_rates(frames, src_hz, dst_hz)?;
    if src_hz == dst_hz {
        return Ok(series.to_owned());
    }
    let n = resampled_len(frames, src_hz, dst_hz);
    let mut out = Array2::zeros((n, d));
    for k in 0..n {
        let (i, f) = bracket(k, frames, src_hz, dst_hz);
        for c in 0..d {
            let a = series[[i, c]] as f64;
            out[[k, c]] = if f == 0.0 {
                a as f32
            } else {
                let b = series[[i + 1, c]] as f64;
                (a + f * (b - a)) as f32
            };
        }
    }
    Ok(out)
}

/// Per-joint slerp of a `T×J×4` quaternion array at timestamps `k / dst_hz`.
pub fn resample_rotations(quats: ArrayView3<f32>, src_hz: f64, dst_hz: f64) -> Result<Array3<f32>> {
    let (frames, j, four) = quats.dim();
    if four != 4 {
        return Err(Error::Shape(format!("expected T×J×4 quaternions, got last axis {four}")));
    }
    check_rates(frames, src_hz, dst_hz)?;
    let q = |t: usize, k: usize| {
        Quat::new(
            quats[[t, k, 0]] as f64,
            quats[[t, k, 1]] as f64,
            quats[[t, k, 2]] as f64,
            quats[[t, k, 3]] as f64,
        )
    };
    for t in 0..frames {
        for k in 0..j {
            let n = q(t, k).norm();
            if (n - 1.0).abs() > 1e-5 {
                return Err(Error::InvalidArgument(format!(
                    "quaternion at frame {t}, joint {k} has norm {n}"
                )));
            }
        }
    }
    if src_hz == dst_hz {
        return Ok(quats.to_owned());
    }
    let n = resampled_len(frames, src_hz, dst_hz);
    let mut out = Array3::zeros((n, j, 4));
    for k in 0..n {
        let (i, f) = bracket(k, frames, src_hz, dst_hz);
        for jj in 0..j {
            let r = if f == 0.0 {
                q(i, jj).normalized()
            } else {
                q(i, jj).slerp(q(i + 1, jj), f)
            };
            for (c, v) in r.to_f32().into_iter().enumerate() {
                out[[k, jj, c]] = v;
            }
        }
    }
    Ok(out)
}

pub fn resample_motion(motion: &LocalMotion, dst_hz: f64) -> Result<LocalMotion> {
    Ok(LocalMotion {
        root_translation: resample_positions(motion.root_translation.view(), motion.rate_hz, dst_hz)?,
        rotations: resample_rotations(motion.rotations.view(), motion.rate_hz, dst_hz)?,
        rate_hz: dst_hz,
    })
}

pub fn resample_poses(poses: &PoseSequence, dst_hz: f64) -> Result<PoseSequence> {
    let (t, j, _) = poses.positions.dim();
    let flat = poses
        .positions
        .view()
        .into_shape_with_order((t, j * 3))
        .map_err(|e| Error::Shape(e.to_string()))?;
    let out = resample_positions(flat, poses.rate_hz, dst_hz)?;
    let n = out.nrows();
    Ok(PoseSequence {
        positions: out.into_shape_with_order((n, j, 3)).expect("contiguous"),
        rate_hz: dst_hz,
    })
}

pub fn apply_rigid(poses: &PoseSequence, xf: &RigidTransform) -> PoseSequence {
    let (t, j, _) = poses.positions.dim();
    let mut positions = poses.positions.clone();
    for f in 0..t {
        for k in 0..j {
            let p = xf.apply(poses.position(f, k));
            for c in 0..3 {
                positions[[f, k, c]] = p[c] as f32;
            }
        }
    }
    PoseSequence {
        positions,
        rate_hz: poses.rate_hz,
    }
}

/// Applies `xf` to the root channel instead of the joint positions. The
/// skeleton is scaled as well, so `FK(result) == apply_rigid(FK(input))`.
pub fn apply_rigid_to_root(
    motion: &LocalMotion,
    skeleton: &Skeleton,
    xf: &RigidTransform,
) -> (LocalMotion, Skeleton) {
    let mut m = motion.clone();
    let root = skeleton.parents.iter().position(|&p| p < 0).unwrap_or(0);
    for t in 0..m.frames() {
        let p = xf.apply(motion.root(t));
        for c in 0..3 {
            m.root_translation[[t, c]] = p[c] as f32;
        }
        m.set_rotation(t, root, xf.rotation * motion.rotation(t, root));
    }
    let mut s = skeleton.clone();
    for o in &mut s.offsets {
        for v in o.iter_mut() {
            *v = (*v as f64 * xf.scale) as f32;
        }
    }
    (m, s)
}

/// Joint index of each joint's mirror image, from the `Left*`/`Right*` naming
/// convention. Joints without a side prefix map to themselves.
pub fn mirror_pairs(skeleton: &Skeleton) -> Result<Vec<usize>> {
    let names = &skeleton.names;
    names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let other = if let Some(rest) = name.strip_prefix("Left") {
                format!("Right{rest}")
            } else if let Some(rest) = name.strip_prefix("Right") {
                format!("Left{rest}")
            } else {
                return Ok(i);
            };
            names.iter().position(|n| *n == other).ok_or_else(|| {
                Error::InvalidArgument(format!("joint `{name}` has no mirror counterpart `{other}`"))
            })
        })
        .collect()
}

/// Negates x and swaps left/right joint channels.
pub fn mirror(poses: &PoseSequence, skeleton: &Skeleton) -> Result<PoseSequence> {
    let pairs = mirror_pairs(skeleton)?;
    if pairs.len() != poses.joints() {
        return Err(Error::Shape("pose joint count does not match skeleton".into()));
    }
    let mut positions = poses.positions.clone();
    for t in 0..poses.frames() {
        for (k, &src) in pairs.iter().enumerate() {
            positions[[t, k, 0]] = -poses.positions[[t, src, 0]];
            positions[[t, k, 1]] = poses.positions[[t, src, 1]];
            positions[[t, k, 2]] = poses.positions[[t, src, 2]];
        }
    }
    Ok(PoseSequence {
        positions,
        rate_hz: poses.rate_hz,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quat::{norm3, sub3};
    use crate::synth::default_skeleton;
    use crate::types::FootJoints;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_motion(skel: &Skeleton, frames: usize, seed: u64) -> LocalMotion {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let j = skel.num_joints();
        let mut m = LocalMotion {
            root_translation: Array2::zeros((frames, 3)),
            rotations: Array3::zeros((frames, j, 4)),
            rate_hz: 100.0,
        };
        for t in 0..frames {
            for c in 0..3 {
                m.root_translation[[t, c]] = rng.random_range(-2.0..2.0);
            }
            for k in 0..j {
                let q = Quat::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
                .normalized();
                m.set_rotation(t, k, q);
            }
        }
        m
    }

    fn identity_motion(j: usize, frames: usize) -> LocalMotion {
        let mut m = LocalMotion {
            root_translation: Array2::zeros((frames, 3)),
            rotations: Array3::zeros((frames, j, 4)),
            rate_hz: 100.0,
        };
        for t in 0..frames {
            for k in 0..j {
                m.set_rotation(t, k, Quat::IDENTITY);
            }
        }
        m
    }

    #[test]
    fn identity_pose_sums_offsets() {
        let skel = default_skeleton(1.75);
        let poses = forward_kinematics(&skel, &identity_motion(23, 2)).unwrap();
        for k in 0..23 {
            let mut expected = [0.0; 3];
            let mut cur = Some(k);
            while let Some(c) = cur {
                if skel.parent(c).is_some() {
                    expected = add3(expected, skel.offset(c));
                }
                cur = skel.parent(c);
            }
            let p = poses.position(1, k);
            assert!(norm3(sub3(p, expected)) < 1e-6);
        }
    }

    #[test]
    fn root_half_turn_negates_horizontal() {
        let skel = default_skeleton(1.75);
        let base = identity_motion(23, 1);
        let mut turned = base.clone();
        turned.set_rotation(0, 0, Quat::from_yaw(std::f64::consts::PI));
        let a = forward_kinematics(&skel, &base).unwrap();
        let b = forward_kinematics(&skel, &turned).unwrap();
        for k in 0..23 {
            let (pa, pb) = (a.position(0, k), b.position(0, k));
            assert!((pa[0] + pb[0]).abs() < 1e-6);
            assert!((pa[1] - pb[1]).abs() < 1e-6);
            assert!((pa[2] + pb[2]).abs() < 1e-6);
        }
    }

    /// Homogeneous 4×4 matrix chain, independent of the quaternion path.
    fn matrix_chain_position(skel: &Skeleton, m: &LocalMotion, t: usize, joint: usize) -> [f64; 3] {
        type M4 = [[f64; 4]; 4];
        fn mul(a: &M4, b: &M4) -> M4 {
            let mut r = [[0.0; 4]; 4];
            for i in 0..4 {
                for j in 0..4 {
                    for k in 0..4 {
                        r[i][j] += a[i][k] * b[k][j];
                    }
                }
            }
            r
        }
        fn local(q: Quat, tr: [f64; 3]) -> M4 {
            let (w, x, y, z) = (q.w, q.x, q.y, q.z);
            [
                [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y), tr[0]],
                [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x), tr[1]],
                [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y), tr[2]],
                [0.0, 0.0, 0.0, 1.0],
            ]
        }
        let mut chain = vec![joint];
        while let Some(p) = skel.parent(*chain.last().unwrap()) {
            chain.push(p);
        }
        chain.reverse();
        let mut acc: M4 = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]];
        for &k in &chain {
            let tr = if skel.parent(k).is_none() { m.root(t) } else { skel.offset(k) };
            acc = mul(&acc, &local(m.rotation(t, k), tr));
        }
        [acc[0][3], acc[1][3], acc[2][3]]
    }

    #[test]
    fn three_joint_chain_matches_matrix_oracle() {
        let skel = Skeleton {
            parents: vec![-1, 0, 1],
            offsets: vec![[0.0, 0.0, 0.0], [0.1, 0.5, -0.2], [0.3, -0.4, 0.25]],
            names: vec!["Root".into(), "A".into(), "B".into()],
            foot_joints: FootJoints {
                left_ankle: 0,
                left_toe: 1,
                right_ankle: 2,
                right_toe: 2,
            },
        };
        for seed in 0..20 {
            let m = random_motion(&skel, 5, seed);
            let poses = forward_kinematics(&skel, &m).unwrap();
            for t in 0..5 {
                for k in 0..3 {
                    let oracle = matrix_chain_position(&skel, &m, t, k);
                    assert!(norm3(sub3(poses.position(t, k), oracle)) < 1e-6);
                }
            }
        }
    }

    #[test]
    fn fk_rejects_joint_mismatch() {
        let skel = default_skeleton(1.75);
        assert!(forward_kinematics(&skel, &identity_motion(22, 3)).is_err());
    }

    proptest! {
        #[test]
        fn fk_preserves_bone_lengths(seed in 0u64..1000) {
            let skel = default_skeleton(1.7);
            let m = random_motion(&skel, 3, seed);
            let poses = forward_kinematics(&skel, &m).unwrap();
            for t in 0..3 {
                for k in 1..23 {
                    let p = skel.parent(k).unwrap();
                    let len = norm3(sub3(poses.position(t, k), poses.position(t, p)));
                    prop_assert!((len - skel.bone_length(k)).abs() < 1e-5);
                }
            }
        }

        #[test]
        fn rigid_transform_commutes_with_fk(seed in 0u64..500, yaw in 0.0..6.28f64, s in 0.8..1.2f64) {
            let skel = default_skeleton(1.7);
            let m = random_motion(&skel, 2, seed);
            let xf = RigidTransform { rotation: Quat::from_yaw(yaw), translation: [1.5, 0.2, -3.0], scale: s };
            let a = apply_rigid(&forward_kinematics(&skel, &m).unwrap(), &xf);
            let (m2, s2) = apply_rigid_to_root(&m, &skel, &xf);
            let b = forward_kinematics(&s2, &m2).unwrap();
            for t in 0..2 {
                for k in 0..23 {
                    prop_assert!(norm3(sub3(a.position(t, k), b.position(t, k))) < 1e-5);
                }
            }
        }
    }

    #[test]
    fn difference_of_ramp_and_parabola() {
        let rate = 100.0;
        let ramp = Array2::from_shape_fn((20, 1), |(t, _)| 1.7 * t as f64 / rate);
        let v = finite_difference(ramp.view(), DiffOrder::First, rate).unwrap();
        for t in 1..19 {
            assert!((v[[t, 0]] - 1.7).abs() < 1e-9);
        }
        let para = Array2::from_shape_fn((20, 1), |(t, _)| 0.5 * -9.81 * (t as f64 / rate).powi(2));
        let a = finite_difference(para.view(), DiffOrder::Second, rate).unwrap();
        for t in 1..19 {
            assert!((a[[t, 0]] + 9.81).abs() < 1e-6);
        }
        let flat = Array2::from_elem((5, 2), 3.25);
        for order in [DiffOrder::First, DiffOrder::Second] {
            let d = finite_difference(flat.view(), order, rate).unwrap();
            assert!(d.iter().all(|&v| v == 0.0));
        }
        assert!(finite_difference(Array2::zeros((2, 1)).view(), DiffOrder::First, rate).is_err());
    }

    #[test]
    fn velocity_is_translation_invariant() {
        let skel = default_skeleton(1.7);
        let poses = forward_kinematics(&skel, &random_motion(&skel, 6, 4)).unwrap();
        let xf = RigidTransform { translation: [3.0, -1.0, 2.0], ..RigidTransform::IDENTITY };
        let a = joint_velocities(&poses).unwrap();
        let b = joint_velocities(&apply_rigid(&poses, &xf)).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-3);
        }
    }

    #[test]
    fn resampling_lengths_and_identity() {
        assert_eq!(resampled_len(241, 240.0, 100.0), 101);
        assert_eq!(resampled_len(240, 240.0, 100.0), 100);
        let s = Array2::from_shape_fn((7, 2), |(t, c)| (t * 3 + c) as f32 * 0.37);
        let r = resample_positions(s.view(), 100.0, 100.0).unwrap();
        assert_eq!(r, s);
        assert!(resample_positions(Array2::zeros((1, 2)).view(), 240.0, 100.0).is_err());
    }

    #[test]
    fn slerp_resampling_handles_sign_flip() {
        let mut q = Array3::<f32>::zeros((2, 1, 4));
        let a = Quat::from_yaw(0.3);
        let b = Quat::from_yaw(0.3).neg();
        for (c, v) in a.to_f32().into_iter().enumerate() {
            q[[0, 0, c]] = v;
        }
        for (c, v) in b.to_f32().into_iter().enumerate() {
            q[[1, 0, c]] = v;
        }
        let r = resample_rotations(q.view(), 1.0, 4.0).unwrap();
        for k in 0..r.shape()[0] {
            let rq = Quat::new(r[[k, 0, 0]] as f64, r[[k, 0, 1]] as f64, r[[k, 0, 2]] as f64, r[[k, 0, 3]] as f64);
            assert!(rq.angle_to(a) < 1e-6);
        }
    }

    #[test]
    fn rigid_basics() {
        let skel = default_skeleton(1.7);
        let poses = forward_kinematics(&skel, &random_motion(&skel, 3, 9)).unwrap();
        assert_eq!(apply_rigid(&poses, &RigidTransform::IDENTITY), poses);
        let xf = RigidTransform { translation: [0.5, 0.0, -0.25], ..RigidTransform::IDENTITY };
        let moved = apply_rigid(&poses, &xf);
        for t in 0..3 {
            for k in 0..23 {
                let d = sub3(moved.position(t, k), poses.position(t, k));
                assert!((d[0] - 0.5).abs() < 1e-5 && d[1].abs() < 1e-5 && (d[2] + 0.25).abs() < 1e-5);
            }
        }
        let xf = RigidTransform { scale: 2.0, ..RigidTransform::IDENTITY };
        let big = apply_rigid(&poses, &xf);
        let d0 = norm3(sub3(poses.position(1, 4), poses.position(1, 17)));
        let d1 = norm3(sub3(big.position(1, 4), big.position(1, 17)));
        assert!((d1 - 2.0 * d0).abs() < 1e-5);
    }

    #[test]
    fn mirror_involution_and_fixed_point() {
        let skel = default_skeleton(1.7);
        let poses = forward_kinematics(&skel, &random_motion(&skel, 4, 1)).unwrap();
        let once = mirror(&poses, &skel).unwrap();
        assert_eq!(mirror(&once, &skel).unwrap(), poses);
        let fj = skel.foot_joints;
        for t in 0..4 {
            let l = once.position(t, fj.left_ankle);
            let r = poses.position(t, fj.right_ankle);
            assert_eq!(l, [-r[0], r[1], r[2]]);
        }
        let tpose = forward_kinematics(&skel, &identity_motion(23, 1)).unwrap();
        let m = mirror(&tpose, &skel).unwrap();
        for (a, b) in m.positions.iter().zip(tpose.positions.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn mirror_rejects_unpaired_names() {
        let mut skel = default_skeleton(1.7);
        skel.names[17] = "LeftFootX".into();
        let poses = forward_kinematics(&skel, &identity_motion(23, 1)).unwrap();
        assert!(mirror(&poses, &skel).is_err());
    }
}
