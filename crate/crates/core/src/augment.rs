//! Training-time augmentation: skeleton sampling from an SVD basis,
//! morphology edits, vGRF-invariant rigid transforms and windowing.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{apply_rigid, forward_kinematics, mirror, RigidTransform};
use crate::quat::Quat;
use crate::rng;
use crate::types::{ContactSequence, FootJoints, LocalMotion, PoseSequence, Skeleton, Take, VgrfSequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonBasis {
    /// Flattened mean offsets, `3J`.
    pub mean: Vec<f64>,
    /// Right singular vectors, one `3J` row each.
    pub components: Vec<Vec<f64>>,
    /// Per-component standard deviation of the source skeletons.
    pub singular_values: Vec<f64>,
    pub parents: Vec<i32>,
    pub names: Vec<String>,
    pub foot_joints: FootJoints,
}

impl SkeletonBasis {
    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    /// Skeleton with the given flattened offsets and this basis' topology.
    pub fn skeleton_from(&self, flat: &[f64]) -> Skeleton {
        Skeleton {
            parents: self.parents.clone(),
            offsets: flat
                .chunks_exact(3)
                .map(|c| [c[0] as f32, c[1] as f32, c[2] as f32])
                .collect(),
            names: self.names.clone(),
            foot_joints: self.foot_joints,
        }
    }

    pub fn project(&self, skeleton: &Skeleton) -> Vec<f64> {
        let x = flatten(skeleton);
        self.components
            .iter()
            .map(|c| c.iter().zip(&x).zip(&self.mean).map(|((c, x), m)| c * (x - m)).sum())
            .collect()
    }

    pub fn reconstruct(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, &w) in self.components.iter().zip(coeffs) {
            for (o, v) in out.iter_mut().zip(c) {
                *o += w * v;
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let basis: SkeletonBasis = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        let n = basis.mean.len();
        if n != 3 * basis.parents.len()
            || basis.components.iter().any(|c| c.len() != n)
            || basis.singular_values.len() != basis.components.len()
        {
            return Err(Error::Shape(format!("{}: inconsistent basis dimensions", path.display())));
        }
        Ok(basis)
    }
}

fn flatten(skeleton: &Skeleton) -> Vec<f64> {
    skeleton
        .offsets
        .iter()
        .flat_map(|o| o.iter().map(|&v| v as f64))
        .collect()
}

pub fn build_skeleton_basis(skeletons: &[Skeleton]) -> Result<SkeletonBasis> {
    let first = skeletons
        .first()
        .ok_or_else(|| Error::InvalidArgument("skeleton basis needs at least two skeletons".into()))?;
    if skeletons.len() < 2 {
        return Err(Error::InvalidArgument("skeleton basis needs at least two skeletons".into()));
    }
    for s in skeletons {
        if s.parents != first.parents {
            return Err(Error::InvalidArgument("skeletons differ in topology".into()));
        }
    }
    let n = skeletons.len();
    let d = 3 * first.num_joints();
    let rows: Vec<Vec<f64>> = skeletons.iter().map(flatten).collect();
    let mut mean = vec![0.0; d];
    for r in &rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n as f64;
        }
    }
    let centered = DMatrix::from_fn(n, d, |i, j| rows[i][j] - mean[j]);
    let svd = centered.svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let norm = ((n - 1) as f64).sqrt();
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let components = order
        .iter()
        .map(|&k| v_t.row(k).iter().copied().collect())
        .collect();
    let singular_values = order.iter().map(|&k| svd.singular_values[k] / norm).collect();
    Ok(SkeletonBasis {
        mean,
        components,
        singular_values,
        parents: first.parents.clone(),
        names: first.names.clone(),
        foot_joints: first.foot_joints,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Horizontal translation drawn from `±translation_m` per axis.
    pub translation_m: f64,
    /// Uniform yaw over the full circle.
    pub rotate: bool,
    pub scale_range: [f64; 2],
    pub mirror_prob: f64,
    pub weight_multiplier: f64,
    pub jitter_std_m: f64,
    pub bone_rescale: [f64; 2],
    pub window: usize,
    pub stride: usize,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            translation_m: 5.0,
            rotate: true,
            scale_range: [0.9, 1.1],
            mirror_prob: 0.5,
            weight_multiplier: 1.0,
            jitter_std_m: 0.01,
            bone_rescale: [0.95, 1.05],
            window: 240,
            stride: 60,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// Window length and stride of `self` with every random edit switched off.
    pub fn disabled(&self) -> Self {
        AugmentConfig {
            translation_m: 0.0,
            rotate: false,
            scale_range: [1.0, 1.0],
            mirror_prob: 0.0,
            weight_multiplier: 0.0,
            jitter_std_m: 0.0,
            bone_rescale: [1.0, 1.0],
            ..self.clone()
        }
    }

    pub fn check(&self) -> Vec<String> {
        let mut issues = Vec::new();
        let ordered = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        if !(self.translation_m >= 0.0 && self.translation_m.is_finite()) {
            issues.push("translation_m must be finite and nonnegative".into());
        }
        if !ordered(self.scale_range) || self.scale_range[0] <= 0.0 {
            issues.push("scale_range must be an ordered positive interval".into());
        }
        if !ordered(self.bone_rescale) || self.bone_rescale[0] <= 0.0 {
            issues.push("bone_rescale must be an ordered positive interval".into());
        }
        if !(0.0..=1.0).contains(&self.mirror_prob) {
            issues.push("mirror_prob must lie in [0, 1]".into());
        }
        if !(self.weight_multiplier >= 0.0) || !(self.jitter_std_m >= 0.0) {
            issues.push("weight_multiplier and jitter_std_m must be nonnegative".into());
        }
        if self.window == 0 || self.stride == 0 {
            issues.push("window and stride must be at least 1".into());
        }
        issues
    }

    pub fn validate(&self) -> Result<()> {
        let issues = self.check();
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(issues))
        }
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..r[1])
    } else {
        r[0]
    }
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    Distribution::<f64>::sample(&StandardNormal, rng)
}

/// Per-joint jitter and bone-length rescaling. The root offset is left alone.
pub fn edit_morphology<R: Rng + ?Sized>(skeleton: &Skeleton, cfg: &AugmentConfig, rng: &mut R) -> Skeleton {
    let mut out = skeleton.clone();
    for (j, o) in out.offsets.iter_mut().enumerate() {
        if skeleton.parents[j] < 0 {
            continue;
        }
        let mut v = [o[0] as f64, o[1] as f64, o[2] as f64];
        for c in &mut v {
            *c += cfg.jitter_std_m * normal(rng);
        }
        let k = uniform(rng, cfg.bone_rescale);
        *o = [(v[0] * k) as f32, (v[1] * k) as f32, (v[2] * k) as f32];
    }
    out
}

pub fn sample_skeleton<R: Rng + ?Sized>(basis: &SkeletonBasis, cfg: &AugmentConfig, rng: &mut R) -> Skeleton {
    let coeffs: Vec<f64> = basis
        .singular_values
        .iter()
        .map(|s| normal(rng) * cfg.weight_multiplier * s)
        .collect();
    let skeleton = basis.skeleton_from(&basis.reconstruct(&coeffs));
    edit_morphology(&skeleton, cfg, rng)
}

/// FK of `motion` on `skeleton`, then one random similarity transform and an
/// optional mirror. Returns the poses and whether they were mirrored.
pub fn augment_window<R: Rng + ?Sized>(
    motion: &LocalMotion,
    skeleton: &Skeleton,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<(PoseSequence, bool)> {
    if motion.frames() != cfg.window {
        return Err(Error::Shape(format!(
            "window has {} frames, expected {}",
            motion.frames(),
            cfg.window
        )));
    }
    let poses = forward_kinematics(skeleton, motion)?;
    let yaw = if cfg.rotate {
        rng.random_range(0.0..std::f64::consts::TAU)
    } else {
        0.0
    };
    let t = cfg.translation_m;
    let (tx, tz) = if t > 0.0 {
        (rng.random_range(-t..t), rng.random_range(-t..t))
    } else {
        (0.0, 0.0)
    };
    let xf = RigidTransform {
        rotation: Quat::from_yaw(yaw),
        translation: [tx, 0.0, tz],
        scale: uniform(rng, cfg.scale_range),
    };
    let poses = if xf == RigidTransform::IDENTITY {
        poses
    } else {
        apply_rigid(&poses, &xf)
    };
    let mirrored = cfg.mirror_prob > 0.0 && rng.random::<f64>() < cfg.mirror_prob;
    if mirrored {
        Ok((mirror(&poses, skeleton)?, true))
    } else {
        Ok((poses, false))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WindowRef {
    pub take: usize,
    pub start: usize,
}

/// All windows of `cfg.window` frames at `cfg.stride`, plus the number of
/// takes skipped for being too short.
pub fn make_windows(takes: &[Take], cfg: &AugmentConfig) -> (Vec<WindowRef>, usize) {
    let mut out = Vec::new();
    let mut skipped = 0;
    for (i, take) in takes.iter().enumerate() {
        let n = take.frames();
        if n < cfg.window {
            skipped += 1;
            continue;
        }
        out.extend((0..=(n - cfg.window) / cfg.stride).map(|k| WindowRef {
            take: i,
            start: k * cfg.stride,
        }));
    }
    if skipped > 0 {
        log::warn!("{skipped} take(s) shorter than {} frames skipped", cfg.window);
    }
    (out, skipped)
}

#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub input: PoseSequence,
    pub vgrf: Option<VgrfSequence>,
    pub contacts: Option<ContactSequence>,
    pub mirrored: bool,
}

/// One augmented window. The random stream depends only on
/// `(cfg.seed, epoch, index)`.
pub fn training_sample(
    take: &Take,
    window: WindowRef,
    basis: Option<&SkeletonBasis>,
    cfg: &AugmentConfig,
    epoch: u64,
    index: u64,
) -> Result<TrainingSample> {
    let motion = take
        .local_motion
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("take has no joint-angle motion".into()))?;
    let mut r = rng::stream(cfg.seed, &[epoch, index]);
    let skeleton = match basis {
        Some(b) => sample_skeleton(b, cfg, &mut r),
        None => edit_morphology(&take.skeleton, cfg, &mut r),
    };
    let (input, mirrored) = augment_window(&motion.window(window.start, cfg.window), &skeleton, cfg, &mut r)?;
    let pick_v = |v: &VgrfSequence| {
        let w = VgrfSequence {
            values: v
                .values
                .slice(ndarray::s![window.start..window.start + cfg.window, .., ..])
                .to_owned(),
            rate_hz: v.rate_hz,
        };
        if mirrored {
            w.swap_feet()
        } else {
            w
        }
    };
    let pick_c = |c: &ContactSequence| {
        let w = c.window(window.start, cfg.window);
        if mirrored {
            w.swap_feet()
        } else {
            w
        }
    };
    Ok(TrainingSample {
        input,
        vgrf: take.vgrf.as_ref().map(pick_v),
        contacts: take.contacts.as_ref().map(pick_c),
        mirrored,
    })
}
