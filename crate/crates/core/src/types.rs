//! Domain types shared by every stage of the pipeline.
//!
//! Units are fixed throughout: meters, seconds, N/cm² for pressure and
//! body-weight fractions for vertical ground reaction forces. The world frame
//! is Y-up with the ground plane at y = 0; +x points to the character's left
//! when it faces +z.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::grf::ContactParams;
use crate::quat::Quat;

/// Number of pressure cells per insole.
pub const CELLS: usize = 16;
/// Default joint count of the capture skeleton.
pub const DEFAULT_JOINTS: usize = 23;
/// Standard gravity, m/s².
pub const GRAVITY: f64 = 9.81;

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;
pub const HEEL: usize = 0;
pub const TOE: usize = 1;

/// Joints carrying the heel and toe contact locations, indexed `[foot][location]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FootJoints {
    pub left_ankle: usize,
    pub left_toe: usize,
    pub right_ankle: usize,
    pub right_toe: usize,
}

impl FootJoints {
    pub fn get(&self, foot: usize, location: usize) -> usize {
        match (foot, location) {
            (LEFT, HEEL) => self.left_ankle,
            (LEFT, _) => self.left_toe,
            (_, HEEL) => self.right_ankle,
            _ => self.right_toe,
        }
    }

    pub fn all(&self) -> [usize; 4] {
        [
            self.left_ankle,
            self.left_toe,
            self.right_ankle,
            self.right_toe,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    /// Parent joint index, `-1` for the root.
    pub parents: Vec<i32>,
    /// Local translation from the parent joint, meters.
    pub offsets: Vec<[f32; 3]>,
    pub names: Vec<String>,
    pub foot_joints: FootJoints,
}

impl Skeleton {
    pub fn num_joints(&self) -> usize {
        self.parents.len()
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        usize::try_from(self.parents[joint]).ok()
    }

    pub fn offset(&self, joint: usize) -> [f64; 3] {
        let o = self.offsets[joint];
        [o[0] as f64, o[1] as f64, o[2] as f64]
    }

    pub fn bone_length(&self, joint: usize) -> f64 {
        crate::quat::norm3(self.offset(joint))
    }

    /// Invariant violations, empty when the skeleton is well formed.
    pub fn check(&self) -> Vec<String> {
        let mut issues = Vec::new();
        let j = self.parents.len();
        if self.offsets.len() != j || self.names.len() != j {
            issues.push(format!(
                "skeleton: {} parents, {} offsets, {} names",
                j,
                self.offsets.len(),
                self.names.len()
            ));
            return issues;
        }
        let roots = self.parents.iter().filter(|&&p| p < 0).count();
        if roots != 1 {
            issues.push(format!("skeleton: expected exactly one root, found {roots}"));
        }
        for (i, &p) in self.parents.iter().enumerate() {
            if p < -1 || (p >= 0 && p as usize >= i) {
                issues.push(format!(
                    "skeleton: joint {i} has parent {p}, not topologically ordered"
                ));
            }
        }
        if self.parents.first().is_some_and(|&p| p != -1) {
            issues.push("skeleton: joint 0 must be the root".into());
        }
        for (i, o) in self.offsets.iter().enumerate() {
            if o.iter().any(|v| !v.is_finite()) {
                issues.push(format!("skeleton: offset of joint {i} is not finite"));
            }
        }
        let feet = self.foot_joints.all();
        for (k, &f) in feet.iter().enumerate() {
            if f >= j {
                issues.push(format!("skeleton: foot joint {f} out of range"));
            }
            if feet[..k].contains(&f) {
                issues.push(format!("skeleton: foot joint {f} listed twice"));
            }
        }
        issues
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalMotion {
    /// `T×3`, meters.
    pub root_translation: Array2<f32>,
    /// `T×J×4` unit quaternions (w, x, y, z), local to the parent joint.
    pub rotations: Array3<f32>,
    pub rate_hz: f64,
}

impl LocalMotion {
    pub fn frames(&self) -> usize {
        self.rotations.shape()[0]
    }

    pub fn joints(&self) -> usize {
        self.rotations.shape()[1]
    }

    pub fn rotation(&self, t: usize, j: usize) -> Quat {
        let r = &self.rotations;
        Quat::new(
            r[[t, j, 0]] as f64,
            r[[t, j, 1]] as f64,
            r[[t, j, 2]] as f64,
            r[[t, j, 3]] as f64,
        )
    }

    pub fn set_rotation(&mut self, t: usize, j: usize, q: Quat) {
        let q = q.to_f32();
        for (c, v) in q.into_iter().enumerate() {
            self.rotations[[t, j, c]] = v;
        }
    }

    pub fn root(&self, t: usize) -> [f64; 3] {
        let r = &self.root_translation;
        [r[[t, 0]] as f64, r[[t, 1]] as f64, r[[t, 2]] as f64]
    }

    /// Frame range `[start, start + len)` as an owned motion.
    pub fn window(&self, start: usize, len: usize) -> LocalMotion {
        use ndarray::s;
        LocalMotion {
            root_translation: self.root_translation.slice(s![start..start + len, ..]).to_owned(),
            rotations: self.rotations.slice(s![start..start + len, .., ..]).to_owned(),
            rate_hz: self.rate_hz,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence {
    /// `T×J×3`, meters, world frame.
    pub positions: Array3<f32>,
    pub rate_hz: f64,
}

impl PoseSequence {
    pub fn frames(&self) -> usize {
        self.positions.shape()[0]
    }

    pub fn joints(&self) -> usize {
        self.positions.shape()[1]
    }

    pub fn position(&self, t: usize, j: usize) -> [f64; 3] {
        let p = &self.positions;
        [p[[t, j, 0]] as f64, p[[t, j, 1]] as f64, p[[t, j, 2]] as f64]
    }

    pub fn window(&self, start: usize, len: usize) -> PoseSequence {
        use ndarray::s;
        PoseSequence {
            positions: self.positions.slice(s![start..start + len, .., ..]).to_owned(),
            rate_hz: self.rate_hz,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellGroup {
    Heel,
    Toe,
    Gray,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InsoleCell {
    pub area_cm2: f64,
    /// (lateral x, forward z) in the foot frame, meters.
    pub position: [f64; 2],
    pub group: CellGroup,
}

/// Cell geometry of both insoles, `feet[foot][cell]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InsoleLayout {
    pub feet: [Vec<InsoleCell>; 2],
}

impl InsoleLayout {
    /// Approximate 16-cell insole on a 0.25 m foot outline.
    ///
    /// The real sensor map is only available as a drawing, so this layout is a
    /// stand-in: cells 0-3 form the heel group, 4-7 the mid-foot gray cells and
    /// 8-15 the toe group. Load a layout file to use measured geometry.
    pub fn approximate() -> Self {
        // (x, z, area) for the left foot; the right foot mirrors x.
        const LEFT_CELLS: [(f64, f64, f64); CELLS] = [
            (-0.016, 0.030, 9.0),
            (0.016, 0.030, 9.0),
            (-0.018, 0.062, 9.0),
            (0.018, 0.062, 9.0),
            (-0.021, 0.100, 7.0),
            (0.019, 0.100, 7.0),
            (-0.024, 0.135, 7.0),
            (0.020, 0.135, 7.0),
            (-0.033, 0.170, 6.0),
            (-0.011, 0.172, 6.0),
            (0.011, 0.172, 6.0),
            (0.031, 0.168, 6.0),
            (-0.030, 0.208, 6.0),
            (-0.010, 0.215, 6.0),
            (0.010, 0.212, 6.0),
            (0.026, 0.200, 6.0),
        ];
        let foot = |sign: f64| {
            LEFT_CELLS
                .iter()
                .enumerate()
                .map(|(i, &(x, z, a))| InsoleCell {
                    area_cm2: a,
                    position: [sign * x, z],
                    group: match i {
                        0..=3 => CellGroup::Heel,
                        4..=7 => CellGroup::Gray,
                        _ => CellGroup::Toe,
                    },
                })
                .collect::<Vec<_>>()
        };
        InsoleLayout {
            feet: [foot(1.0), foot(-1.0)],
        }
    }

    pub fn cells_in(&self, foot: usize, group: CellGroup) -> impl Iterator<Item = usize> + '_ {
        self.feet[foot]
            .iter()
            .enumerate()
            .filter(move |(_, c)| c.group == group)
            .map(|(i, _)| i)
    }

    pub fn check(&self) -> Vec<String> {
        let mut issues = Vec::new();
        for (f, cells) in self.feet.iter().enumerate() {
            if cells.len() != CELLS {
                issues.push(format!("layout: foot {f} has {} cells, expected {CELLS}", cells.len()));
            }
            for (c, cell) in cells.iter().enumerate() {
                if !(cell.area_cm2 > 0.0) || !cell.area_cm2.is_finite() {
                    issues.push(format!(
                        "layout: foot {f} cell {c} has non-positive area {}",
                        cell.area_cm2
                    ));
                }
                if cell.position.iter().any(|v| !v.is_finite()) {
                    issues.push(format!("layout: foot {f} cell {c} position is not finite"));
                }
            }
            for group in [CellGroup::Heel, CellGroup::Toe] {
                if self.cells_in(f, group).next().is_none() {
                    issues.push(format!("layout: foot {f} has an empty {group:?} group"));
                }
            }
        }
        issues
    }
}

impl Default for InsoleLayout {
    fn default() -> Self {
        InsoleLayout::approximate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PressureSequence {
    /// `T×2×16`, N/cm².
    pub values: Array3<f32>,
    pub rate_hz: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VgrfSequence {
    /// `T×2×16`, body-weight fractions.
    pub values: Array3<f32>,
    pub rate_hz: f64,
}

impl VgrfSequence {
    pub fn frames(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn zeros(frames: usize, rate_hz: f64) -> Self {
        VgrfSequence {
            values: Array3::zeros((frames, 2, CELLS)),
            rate_hz,
        }
    }

    /// Exchanges left and right insoles.
    pub fn swap_feet(&self) -> Self {
        let mut values = self.values.clone();
        for t in 0..self.frames() {
            for c in 0..CELLS {
                values[[t, LEFT, c]] = self.values[[t, RIGHT, c]];
                values[[t, RIGHT, c]] = self.values[[t, LEFT, c]];
            }
        }
        VgrfSequence {
            values,
            rate_hz: self.rate_hz,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactSequence {
    /// `T×2×2` binary labels indexed `[frame, foot, location]`.
    pub labels: Array3<u8>,
    pub rate_hz: f64,
}

impl ContactSequence {
    pub fn frames(&self) -> usize {
        self.labels.shape()[0]
    }

    pub fn zeros(frames: usize, rate_hz: f64) -> Self {
        ContactSequence {
            labels: Array3::zeros((frames, 2, 2)),
            rate_hz,
        }
    }

    pub fn swap_feet(&self) -> Self {
        let mut labels = self.labels.clone();
        for t in 0..self.frames() {
            for l in 0..2 {
                labels[[t, LEFT, l]] = self.labels[[t, RIGHT, l]];
                labels[[t, RIGHT, l]] = self.labels[[t, LEFT, l]];
            }
        }
        ContactSequence {
            labels,
            rate_hz: self.rate_hz,
        }
    }

    pub fn window(&self, start: usize, len: usize) -> ContactSequence {
        use ndarray::s;
        ContactSequence {
            labels: self.labels.slice(s![start..start + len, .., ..]).to_owned(),
            rate_hz: self.rate_hz,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectMeta {
    pub id: String,
    /// Weighed with full equipment, kg.
    pub weight_kg: f64,
    pub height_m: f64,
}

impl SubjectMeta {
    pub fn body_weight_newtons(&self) -> f64 {
        self.weight_kg * GRAVITY
    }
}

/// Insole accelerometer readings, `T×2×3` m/s² (specific force, gravity included).
#[derive(Debug, Clone, PartialEq)]
pub struct ImuSequence {
    pub accel: Array3<f32>,
    pub rate_hz: f64,
}

/// One capture unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Take {
    pub skeleton: Skeleton,
    pub local_motion: Option<LocalMotion>,
    pub poses: PoseSequence,
    pub pressure: Option<PressureSequence>,
    pub vgrf: Option<VgrfSequence>,
    pub contacts: Option<ContactSequence>,
    pub imu: Option<ImuSequence>,
    pub meta: SubjectMeta,
    /// Motion at its capture rate, kept alongside the resampled series.
    pub original_poses: Option<PoseSequence>,
    pub layout: Option<InsoleLayout>,
    pub contact_params: Option<ContactParams>,
    /// Set once motion and insole series share one timeline and rate.
    pub synchronized: bool,
}

impl Take {
    pub fn frames(&self) -> usize {
        self.poses.frames()
    }

    pub fn rate_hz(&self) -> f64 {
        self.poses.rate_hz
    }

    pub fn layout_or_default(&self) -> InsoleLayout {
        self.layout.clone().unwrap_or_default()
    }
}
