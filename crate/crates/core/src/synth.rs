//! Procedural walking and jumping generator.
//!
//! Produces takes whose poses, insole forces and contact labels agree by
//! construction. Feet are placed on a footstep plan along a straight or
//! circular path, legs are solved with analytic two-bone IK, and each stance
//! rolls heel to toe: the heel is pinned from heel strike to heel-off, the toe
//! from toe-down to toe-off. Force profiles are shaped so that the contact
//! function recovers the schedule up to smoothing blur.

use std::f64::consts::PI;

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};

use crate::error::{Error, Result};
use crate::grf::ContactParams;
use crate::kinematics::forward_kinematics;
use crate::quat::*;
use crate::rng;
use crate::types::*;

pub const JOINT_NAMES: [&str; DEFAULT_JOINTS] = [
    "Pelvis",
    "L5",
    "L3",
    "T12",
    "T8",
    "Neck",
    "Head",
    "RightShoulder",
    "RightUpperArm",
    "RightForeArm",
    "RightHand",
    "LeftShoulder",
    "LeftUpperArm",
    "LeftForeArm",
    "LeftHand",
    "RightUpperLeg",
    "RightLowerLeg",
    "RightFoot",
    "RightToe",
    "LeftUpperLeg",
    "LeftLowerLeg",
    "LeftFoot",
    "LeftToe",
];

const PARENTS: [i32; DEFAULT_JOINTS] = [
    -1, 0, 1, 2, 3, 4, 5, 4, 7, 8, 9, 4, 11, 12, 13, 0, 15, 16, 17, 0, 19, 20, 21,
];

// Offsets for a 1.75 m subject; +x is the subject's left.
const OFFSETS: [[f64; 3]; DEFAULT_JOINTS] = [
    [0.0, 0.0, 0.0],
    [0.0, 0.10, 0.0],
    [0.0, 0.10, 0.0],
    [0.0, 0.10, 0.0],
    [0.0, 0.12, 0.0],
    [0.0, 0.16, 0.0],
    [0.0, 0.10, 0.0],
    [-0.04, 0.10, 0.0],
    [-0.14, 0.0, 0.0],
    [-0.28, 0.0, 0.0],
    [-0.25, 0.0, 0.0],
    [0.04, 0.10, 0.0],
    [0.14, 0.0, 0.0],
    [0.28, 0.0, 0.0],
    [0.25, 0.0, 0.0],
    [-0.09, -0.02, 0.0],
    [0.0, -0.44, 0.0],
    [0.0, -0.44, 0.0],
    [0.0, 0.0, 0.17],
    [0.09, -0.02, 0.0],
    [0.0, -0.44, 0.0],
    [0.0, -0.44, 0.0],
    [0.0, 0.0, 0.17],
];

const PELVIS: usize = 0;
const SPINE: [usize; 3] = [1, 2, 3];
const T8: usize = 4;
const NECK: usize = 5;
const UPPER_ARM: [usize; 2] = [12, 8];
const FORE_ARM: [usize; 2] = [13, 9];
const UPPER_LEG: [usize; 2] = [19, 15];
const LOWER_LEG: [usize; 2] = [20, 16];
const FOOT: [usize; 2] = [21, 17];

/// Fraction of stance at which the toe touches down.
pub const TOE_ON_FRACTION: f64 = 0.15;
/// Fraction of stance at which the heel lifts.
pub const HEEL_OFF_FRACTION: f64 = 0.70;
const GRAY_SHARE: f64 = 0.1;
const HEEL_WEIGHTS: [f64; 4] = [0.3, 0.3, 0.2, 0.2];
const TOE_WEIGHTS: [f64; 8] = [0.16, 0.16, 0.16, 0.16, 0.09, 0.09, 0.09, 0.09];
const JUMP_HEIGHT_M: f64 = 0.15;
const PUSH_S: f64 = 0.4;
const LAND_S: f64 = 0.4;
/// Pelvis acceleration at takeoff and touchdown, in units of g.
const JUMP_EDGE_ACCEL_G: f64 = 1.5;
const FIRST_TAKEOFF_S: f64 = 3.0;
const WALK_START_S: f64 = 5.0;
const LAST_TAKEOFF_BEFORE_END_S: f64 = 2.0;
const REACH: f64 = 0.985;

/// The 23-joint humanoid scaled to `height_m`.
pub fn default_skeleton(height_m: f64) -> Skeleton {
    let s = height_m / 1.75;
    Skeleton {
        parents: PARENTS.to_vec(),
        offsets: OFFSETS
            .iter()
            .map(|o| [(o[0] * s) as f32, (o[1] * s) as f32, (o[2] * s) as f32])
            .collect(),
        names: JOINT_NAMES.iter().map(|n| n.to_string()).collect(),
        foot_joints: FootJoints {
            left_ankle: 21,
            left_toe: 22,
            right_ankle: 17,
            right_toe: 18,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaitConfig {
    pub duration_s: f64,
    /// Insole rate, and the motion rate unless `mocap_rate_hz` is set.
    pub rate_hz: f64,
    /// Motion capture rate; a different value yields an unsynchronized take.
    pub mocap_rate_hz: Option<f64>,
    pub speed_mps: f64,
    pub cycle_s: f64,
    /// Stance fraction of the gait cycle.
    pub duty_factor: f64,
    pub weight_kg: f64,
    /// Subject height; scales the skeleton.
    pub height_m: f64,
    /// Signed path radius, positive turning left. `None` walks straight.
    pub turn_radius_m: Option<f64>,
    pub heading_rad: f64,
    /// Adds an in-place double-leg jump near both ends.
    pub jump_markers: bool,
    pub seed: u64,
}

impl Default for GaitConfig {
    fn default() -> Self {
        GaitConfig {
            duration_s: 10.0,
            rate_hz: 100.0,
            mocap_rate_hz: None,
            speed_mps: 1.3,
            cycle_s: 1.1,
            duty_factor: 0.62,
            weight_kg: 72.0,
            height_m: 1.75,
            turn_radius_m: Some(4.0),
            heading_rad: 0.0,
            jump_markers: false,
            seed: 0,
        }
    }
}

impl GaitConfig {
    pub fn check(&self) -> Vec<String> {
        let mut issues = Vec::new();
        let mut need = |ok: bool, msg: String| {
            if !ok {
                issues.push(msg);
            }
        };
        need(self.rate_hz > 0.0 && self.rate_hz.is_finite(), format!("gait: rate {} Hz must be positive", self.rate_hz));
        if let Some(r) = self.mocap_rate_hz {
            need(r > 0.0 && r.is_finite(), format!("gait: mocap rate {r} Hz must be positive"));
        }
        need(
            self.duty_factor > 0.0 && self.duty_factor < 1.0,
            format!("gait: duty factor {} must lie in (0, 1)", self.duty_factor),
        );
        need(self.cycle_s > 0.0, format!("gait: cycle {} s must be positive", self.cycle_s));
        need(
            self.duration_s >= 2.0 * self.cycle_s,
            format!("gait: duration {} s is shorter than two cycles", self.duration_s),
        );
        let stance = self.duty_factor * self.cycle_s;
        need(stance >= 0.45, format!("gait: stance {stance:.3} s is too short for the force profile (min 0.45 s)"));
        let swing = self.cycle_s - stance;
        need(swing >= 0.2, format!("gait: swing {swing:.3} s is too short (min 0.2 s)"));
        need(
            (0.1..=2.5).contains(&self.speed_mps),
            format!("gait: speed {} m/s outside [0.1, 2.5]", self.speed_mps),
        );
        need(
            (20.0..=300.0).contains(&self.weight_kg),
            format!("gait: weight {} kg outside [20, 300]", self.weight_kg),
        );
        need(
            (1.0..=2.5).contains(&self.height_m),
            format!("gait: height {} m outside [1, 2.5]", self.height_m),
        );
        if let Some(r) = self.turn_radius_m {
            need(r.abs() >= 1.0 && r.is_finite(), format!("gait: turn radius {r} m must be at least 1 m"));
        }
        if self.jump_markers {
            let min = min_jump_duration(self.cycle_s);
            need(
                self.duration_s >= min,
                format!("gait: jump markers need at least {min:.2} s, got {}", self.duration_s),
            );
        }
        issues
    }

    fn stance_s(&self) -> f64 {
        self.duty_factor * self.cycle_s
    }
}

/// Shortest take that fits both marker jumps and some walking.
pub fn min_jump_duration(cycle: f64) -> f64 {
    WALK_START_S + 3.0 * cycle + 1.0 + PUSH_S + LAST_TAKEOFF_BEFORE_END_S + 0.1
}

/// Takeoff and touchdown times of the planted jumps.
pub fn jump_times(cfg: &GaitConfig) -> Vec<(f64, f64)> {
    if !cfg.jump_markers {
        return Vec::new();
    }
    let flight = flight_time();
    let last = cfg.duration_s - LAST_TAKEOFF_BEFORE_END_S;
    vec![(FIRST_TAKEOFF_S, FIRST_TAKEOFF_S + flight), (last, last + flight)]
}

fn takeoff_speed() -> f64 {
    (2.0 * GRAVITY * JUMP_HEIGHT_M).sqrt()
}

fn flight_time() -> f64 {
    2.0 * takeoff_speed() / GRAVITY
}

/// Per-take style parameters drawn from the seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaitStyle {
    pub bob_m: f64,
    pub sway_m: f64,
    pub pelvis_yaw_rad: f64,
    pub pelvis_roll_rad: f64,
    pub arm_swing_rad: f64,
    pub elbow_rad: f64,
    pub lean_rad: f64,
    pub clearance_m: f64,
    pub strike_pitch_rad: f64,
    pub push_pitch_rad: f64,
    /// Time of the first left heel strike within the cycle.
    pub phase_s: f64,
}

impl GaitStyle {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, cycle_s: f64) -> Self {
        GaitStyle {
            bob_m: rng.random_range(0.015..0.03),
            sway_m: rng.random_range(0.01..0.03),
            pelvis_yaw_rad: rng.random_range(0.03..0.09),
            pelvis_roll_rad: rng.random_range(0.02..0.06),
            arm_swing_rad: rng.random_range(0.2..0.5),
            elbow_rad: rng.random_range(0.15..0.5),
            lean_rad: rng.random_range(0.0..0.1),
            clearance_m: rng.random_range(0.12..0.18),
            strike_pitch_rad: rng.random_range(0.2..0.35),
            push_pitch_rad: rng.random_range(0.4..0.6),
            phase_s: rng.random_range(0.0..cycle_s),
        }
    }
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

fn smoothstep_integral(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * x - 0.5 * x * x * x * x
}

fn min_jerk(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * x * (10.0 + x * (-15.0 + 6.0 * x))
}

fn lobe(u: f64, center: f64, half_width: f64) -> f64 {
    let d = (u - center) / half_width;
    if d.abs() >= 1.0 {
        0.0
    } else {
        0.5 * (1.0 + (PI * d).cos())
    }
}

/// Double-hump shape over normalized stance time.
fn stance_shape(u: f64) -> f64 {
    0.7 + 0.4 * (lobe(u, 0.2, 0.2) + lobe(u, 0.8, 0.2))
}

fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

/// Quintic segment matching position, velocity and acceleration at both ends.
#[derive(Debug, Clone, Copy)]
struct Quintic {
    t0: f64,
    dur: f64,
    p: [f64; 2],
    v: [f64; 2],
    a: [f64; 2],
}

impl Quintic {
    fn contains(&self, t: f64) -> bool {
        t >= self.t0 && t < self.t0 + self.dur
    }

    fn eval(&self, t: f64) -> (f64, f64) {
        let d = self.dur;
        let x = ((t - self.t0) / d).clamp(0.0, 1.0);
        let (x2, x3, x4, x5) = (x * x, x * x * x, x.powi(4), x.powi(5));
        let h = [
            1.0 - 10.0 * x3 + 15.0 * x4 - 6.0 * x5,
            x - 6.0 * x3 + 8.0 * x4 - 3.0 * x5,
            0.5 * x2 - 1.5 * x3 + 1.5 * x4 - 0.5 * x5,
            0.5 * x3 - x4 + 0.5 * x5,
            -4.0 * x3 + 7.0 * x4 - 3.0 * x5,
            10.0 * x3 - 15.0 * x4 + 6.0 * x5,
        ];
        let hdd = [
            -60.0 * x + 180.0 * x2 - 120.0 * x3,
            -36.0 * x + 96.0 * x2 - 60.0 * x3,
            1.0 - 9.0 * x + 18.0 * x2 - 10.0 * x3,
            3.0 * x - 12.0 * x2 + 10.0 * x3,
            -24.0 * x + 84.0 * x2 - 60.0 * x3,
            60.0 * x - 180.0 * x2 + 120.0 * x3,
        ];
        let c = [
            self.p[0],
            self.v[0] * d,
            self.a[0] * d * d,
            self.a[1] * d * d,
            self.v[1] * d,
            self.p[1],
        ];
        let pos = (0..6).map(|i| h[i] * c[i]).sum();
        let acc = (0..6).map(|i| hdd[i] * c[i]).sum::<f64>() / (d * d);
        (pos, acc)
    }
}

#[derive(Debug, Clone, Copy)]
struct Jump {
    push: Quintic,
    takeoff: f64,
    landing: f64,
    land: Quintic,
    y_takeoff: f64,
}

impl Jump {
    fn new(takeoff: f64, y_stand: f64, y_takeoff: f64) -> Self {
        let v = takeoff_speed();
        let edge = JUMP_EDGE_ACCEL_G * GRAVITY;
        let landing = takeoff + flight_time();
        Jump {
            push: Quintic {
                t0: takeoff - PUSH_S,
                dur: PUSH_S,
                p: [y_stand, y_takeoff],
                v: [0.0, v],
                a: [0.0, edge],
            },
            takeoff,
            landing,
            land: Quintic {
                t0: landing,
                dur: LAND_S,
                p: [y_takeoff, y_stand],
                v: [-v, 0.0],
                a: [edge, 0.0],
            },
            y_takeoff,
        }
    }

    /// Pelvis height and vertical acceleration, if `t` falls inside the jump.
    fn eval(&self, t: f64) -> Option<(f64, f64)> {
        if self.push.contains(t) {
            Some(self.push.eval(t))
        } else if t >= self.takeoff && t < self.landing {
            let tau = t - self.takeoff;
            Some((self.y_takeoff + takeoff_speed() * tau - 0.5 * GRAVITY * tau * tau, -GRAVITY))
        } else if self.land.contains(t) {
            Some(self.land.eval(t))
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Path {
    heading0: f64,
    curvature: f64,
}

impl Path {
    fn heading(&self, s: f64) -> f64 {
        self.heading0 + self.curvature * s
    }

    fn point(&self, s: f64) -> [f64; 3] {
        let k = self.curvature;
        let h0 = self.heading0;
        if k.abs() < 1e-12 {
            [s * h0.sin(), 0.0, s * h0.cos()]
        } else {
            let h = self.heading(s);
            [(h0.cos() - h.cos()) / k, 0.0, (h.sin() - h0.sin()) / k]
        }
    }
}

fn forward_dir(yaw: f64) -> [f64; 3] {
    [yaw.sin(), 0.0, yaw.cos()]
}

fn left_dir(yaw: f64) -> [f64; 3] {
    [yaw.cos(), 0.0, -yaw.sin()]
}

fn foot_rotation(yaw: f64, pitch: f64) -> Quat {
    Quat::from_yaw(yaw) * Quat::from_axis_angle([1.0, 0.0, 0.0], -pitch)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum StanceKind {
    /// Heel-to-toe roll.
    Walk,
    /// Flat foot, both locations loaded.
    Stand,
}

#[derive(Debug, Clone, Copy)]
struct Stance {
    start: f64,
    end: f64,
    /// Ground point under the ankle joint when the foot is flat.
    heel: [f64; 3],
    yaw: f64,
    kind: StanceKind,
    flight_before: bool,
    flight_after: bool,
}

#[derive(Debug, Clone, Copy)]
struct FootPose {
    ankle: [f64; 3],
    yaw: f64,
    pitch: f64,
}

/// Compensated heel/toe share switch times within a walking stance.
#[derive(Debug, Clone, Copy)]
struct ShareSteps {
    toe_on: f64,
    heel_off: f64,
}

struct Generator {
    cfg: GaitConfig,
    style: GaitStyle,
    path: Path,
    /// Walking window with speed ramps; `None` walks at full speed throughout.
    walk: Option<(f64, f64)>,
    jumps: Vec<Jump>,
    stances: [Vec<Stance>; 2],
    hip_offsets: [[f64; 3]; 2],
    thigh: f64,
    shin: f64,
    toe: f64,
    y_stand: f64,
    y_walk: f64,
    /// Force scale and ramp duration of the walking profile.
    kappa: f64,
    ramp_s: f64,
    slope: f64,
    steps: ShareSteps,
}

impl Generator {
    fn new(cfg: &GaitConfig, style: GaitStyle) -> Result<Self> {
        let issues = cfg.check();
        if !issues.is_empty() {
            return Err(Error::Validation(issues));
        }
        let skel = default_skeleton(cfg.height_m);
        let hip_offsets = [skel.offset(UPPER_LEG[LEFT]), skel.offset(UPPER_LEG[RIGHT])];
        let thigh = skel.bone_length(LOWER_LEG[LEFT]);
        let shin = skel.bone_length(FOOT[LEFT]);
        let toe = skel.bone_length(FOOT[LEFT] + 1);
        let leg = thigh + shin;
        let drop = -hip_offsets[0][1];
        let y_stand = 0.93 * leg + drop;
        let y_takeoff = REACH * leg + drop;

        let path = Path {
            heading0: cfg.heading_rad,
            curvature: cfg.turn_radius_m.map_or(0.0, |r| 1.0 / r),
        };
        let (walk, jumps) = if cfg.jump_markers {
            let n = ((cfg.duration_s - min_jump_duration(cfg.cycle_s)) / cfg.cycle_s).floor() as usize + 3;
            let last = cfg.duration_s - LAST_TAKEOFF_BEFORE_END_S;
            (
                Some((WALK_START_S, WALK_START_S + n as f64 * cfg.cycle_s)),
                vec![
                    Jump::new(FIRST_TAKEOFF_S, y_stand, y_takeoff),
                    Jump::new(last, y_stand, y_takeoff),
                ],
            )
        } else {
            (None, Vec::new())
        };

        let params = ContactParams::default();
        let sigma = params.smooth_sigma_s;
        let slope = params.gate_threshold_bw * (2.0 * PI).sqrt() / sigma;
        let mut gen = Generator {
            cfg: cfg.clone(),
            style,
            path,
            walk,
            jumps,
            stances: [Vec::new(), Vec::new()],
            hip_offsets,
            thigh,
            shin,
            toe,
            y_stand,
            y_walk: y_stand,
            kappa: 1.0,
            ramp_s: 0.0,
            slope,
            steps: ShareSteps {
                toe_on: 0.0,
                heel_off: 0.0,
            },
        };
        gen.fit_force_scale();
        gen.steps = gen.share_steps(&params);
        gen.plan_stances();
        gen.y_walk = gen.fit_walk_height();
        Ok(gen)
    }

    fn stance_s(&self) -> f64 {
        self.cfg.stance_s()
    }

    /// Chooses the profile scale so both feet average one body weight per cycle.
    fn fit_force_scale(&mut self) {
        let d = self.stance_s();
        let target = 0.5 * self.cfg.cycle_s;
        let n = 2000;
        for _ in 0..8 {
            self.ramp_s = self.kappa * stance_shape(0.0) / self.slope;
            let integral: f64 = (0..n)
                .map(|i| {
                    let tau = (i as f64 + 0.5) / n as f64 * d;
                    stance_shape(tau / d) * self.ramp(tau, d)
                })
                .sum::<f64>()
                * d
                / n as f64;
            self.kappa = (target / integral).clamp(0.6, 1.5);
        }
        self.ramp_s = self.kappa * stance_shape(0.0) / self.slope;
    }

    fn ramp(&self, tau: f64, d: f64) -> f64 {
        (tau / self.ramp_s).min((d - tau) / self.ramp_s).clamp(0.0, 1.0)
    }

    fn walk_force(&self, tau: f64) -> f64 {
        let d = self.stance_s();
        self.kappa * stance_shape(tau / d) * self.ramp(tau, d)
    }

    /// Places the heel/toe share switches so the smoothed, rescaled location
    /// forces cross the raw threshold at the scheduled contact boundaries.
    fn share_steps(&self, params: &ContactParams) -> ShareSteps {
        let d = self.stance_s();
        let sigma = params.smooth_sigma_s;
        let unit = StdNormal::new(0.0, 1.0).expect("unit normal");
        // After a switch the rising or falling location holds half the non-gray force.
        let level = |tau: f64| 0.5 * self.walk_force(tau);
        let on = TOE_ON_FRACTION * d;
        let off = HEEL_OFF_FRACTION * d;
        let p_on = (params.raw_threshold_bw / level(on)).clamp(1e-6, 0.5);
        let p_off = (params.raw_threshold_bw / level(off)).clamp(1e-6, 0.5);
        ShareSteps {
            toe_on: on - sigma * unit.inverse_cdf(p_on),
            heel_off: off - sigma * unit.inverse_cdf(1.0 - p_off),
        }
    }

    fn speed_ramp(&self, t: f64) -> f64 {
        match self.walk {
            None => 1.0,
            Some((a, b)) => {
                let c = self.cfg.cycle_s;
                if t <= a || t >= b {
                    0.0
                } else if t < a + c {
                    smoothstep((t - a) / c)
                } else if t > b - c {
                    1.0 - smoothstep((t - (b - c)) / c)
                } else {
                    1.0
                }
            }
        }
    }

    /// Path arc length covered by the pelvis at time `t`.
    fn arc(&self, t: f64) -> f64 {
        let v = self.cfg.speed_mps;
        match self.walk {
            None => v * t,
            Some((a, b)) => {
                let c = self.cfg.cycle_s;
                let dist = if t <= a {
                    0.0
                } else if t < a + c {
                    c * smoothstep_integral((t - a) / c)
                } else if t <= b - c {
                    0.5 * c + (t - a - c)
                } else {
                    let x = ((t - (b - c)) / c).clamp(0.0, 1.0);
                    0.5 * c + (b - a - 2.0 * c) + c * (x - smoothstep_integral(x))
                };
                v * dist
            }
        }
    }

    fn footprint(&self, foot: usize, s: f64) -> ([f64; 3], f64) {
        let yaw = self.path.heading(s);
        let lateral = self.hip_offsets[foot][0].abs() * if foot == LEFT { 1.0 } else { -1.0 };
        let center = add3(self.path.point(s), scale3(left_dir(yaw), lateral));
        (sub3(center, scale3(forward_dir(yaw), 0.5 * self.toe)), yaw)
    }

    fn plan_stances(&mut self) {
        let c = self.cfg.cycle_s;
        let d = self.stance_s();
        for foot in [LEFT, RIGHT] {
            let offset = if foot == LEFT { 0.0 } else { 0.5 * c };
            let mut list = Vec::new();
            let walk_stance = |g: &Self, start: f64| {
                let (heel, yaw) = g.footprint(foot, g.arc(start + 0.5 * d));
                Stance {
                    start,
                    end: start + d,
                    heel,
                    yaw,
                    kind: StanceKind::Walk,
                    flight_before: false,
                    flight_after: false,
                }
            };
            match self.walk {
                None => {
                    let mut start = self.style.phase_s + offset - 3.0 * c;
                    while start < self.cfg.duration_s + c {
                        list.push(walk_stance(self, start));
                        start += c;
                    }
                }
                Some((a, b)) => {
                    let stand = |g: &Self, start: f64, end: f64, s: f64, before: bool, after: bool| {
                        let (heel, yaw) = g.footprint(foot, s);
                        Stance {
                            start,
                            end,
                            heel,
                            yaw,
                            kind: StanceKind::Stand,
                            flight_before: before,
                            flight_after: after,
                        }
                    };
                    let (j0, j1) = (self.jumps[0], self.jumps[1]);
                    list.push(stand(self, -1.0, j0.takeoff, 0.0, false, true));
                    list.push(stand(self, j0.landing, a + offset, 0.0, true, false));
                    let mut start = a + offset + c - d;
                    let last_start = b + offset - d;
                    while start < last_start - 1e-9 {
                        list.push(walk_stance(self, start));
                        start += c;
                    }
                    let s_end = self.arc(b);
                    list.push(stand(self, last_start, j1.takeoff, s_end, false, true));
                    list.push(stand(self, j1.landing, self.cfg.duration_s + 1.0, s_end, true, false));
                }
            }
            self.stances[foot] = list;
        }
    }

    fn jump_eval(&self, t: f64) -> Option<(f64, f64)> {
        self.jumps.iter().find_map(|j| j.eval(t))
    }

    fn pelvis_with(&self, t: f64, y_walk: f64) -> ([f64; 3], Quat) {
        let r = self.speed_ramp(t);
        let s = self.arc(t);
        let yaw = self.path.heading(s);
        let st = &self.style;
        let w = 2.0 * PI / self.cfg.cycle_s;
        let ph = t - st.phase_s - 0.5 * self.stance_s();
        let bob = r * st.bob_m * (2.0 * w * ph).cos();
        let sway = r * st.sway_m * (w * ph).cos();
        let base = match self.jump_eval(t) {
            Some((y, _)) => y,
            None => self.y_stand + r * (y_walk - self.y_stand),
        };
        let mut pos = add3(self.path.point(s), scale3(left_dir(yaw), sway));
        pos[1] = base + bob;
        let rot = Quat::from_yaw(yaw + r * st.pelvis_yaw_rad * (w * (t - st.phase_s)).sin())
            * Quat::from_axis_angle([0.0, 0.0, 1.0], r * st.pelvis_roll_rad * (w * ph).cos());
        (pos, rot)
    }

    fn pelvis(&self, t: f64) -> ([f64; 3], Quat) {
        self.pelvis_with(t, self.y_walk)
    }

    fn hip(&self, foot: usize, pelvis: ([f64; 3], Quat)) -> [f64; 3] {
        add3(pelvis.0, pelvis.1.rotate(self.hip_offsets[foot]))
    }

    fn stance_pitch(&self, st: &Stance, t: f64) -> f64 {
        if st.kind == StanceKind::Stand {
            return 0.0;
        }
        let u = ((t - st.start) / (st.end - st.start)).clamp(0.0, 1.0);
        if u < TOE_ON_FRACTION {
            self.style.strike_pitch_rad * (1.0 - smoothstep(u / TOE_ON_FRACTION))
        } else if u <= HEEL_OFF_FRACTION {
            0.0
        } else {
            -self.style.push_pitch_rad * smoothstep((u - HEEL_OFF_FRACTION) / (1.0 - HEEL_OFF_FRACTION))
        }
    }

    fn stance_pose(&self, st: &Stance, t: f64) -> FootPose {
        let pitch = self.stance_pitch(st, t);
        let ankle = if pitch >= 0.0 {
            st.heel
        } else {
            let toe = add3(st.heel, scale3(forward_dir(st.yaw), self.toe));
            sub3(toe, foot_rotation(st.yaw, pitch).rotate([0.0, 0.0, self.toe]))
        };
        FootPose {
            ankle,
            yaw: st.yaw,
            pitch,
        }
    }

    /// Index of the last stance starting at or before `t`.
    fn stance_index(&self, foot: usize, t: f64) -> Option<usize> {
        let list = &self.stances[foot];
        let n = list.partition_point(|s| s.start <= t);
        n.checked_sub(1)
    }

    fn active_stance(&self, foot: usize, t: f64) -> Option<&Stance> {
        self.stance_index(foot, t)
            .map(|i| &self.stances[foot][i])
            .filter(|s| t < s.end)
    }

    fn foot_pose(&self, foot: usize, t: f64) -> FootPose {
        let list = &self.stances[foot];
        let Some(i) = self.stance_index(foot, t) else {
            return self.stance_pose(&list[0], list[0].start);
        };
        let st = &list[i];
        if t < st.end || i + 1 == list.len() {
            return self.stance_pose(st, t.min(st.end));
        }
        let next = &list[i + 1];
        if st.flight_after {
            let lift = self.jump_eval(t).map_or(0.0, |(y, _)| y) - self.jumps[0].y_takeoff;
            return FootPose {
                ankle: add3(st.heel, [0.0, lift.max(0.0), 0.0]),
                yaw: st.yaw,
                pitch: 0.0,
            };
        }
        let from = self.stance_pose(st, st.end);
        let to = self.stance_pose(next, next.start);
        let u = (t - st.end) / (next.start - st.end);
        let m = min_jerk(u);
        let mut ankle = add3(from.ankle, scale3(sub3(to.ankle, from.ankle), m));
        ankle[1] += self.style.clearance_m * (PI * u).sin().powi(2);
        FootPose {
            ankle,
            yaw: from.yaw + wrap_angle(to.yaw - from.yaw) * m,
            pitch: from.pitch + (to.pitch - from.pitch) * m,
        }
    }

    /// Highest walking pelvis height keeping every stance within leg reach.
    fn fit_walk_height(&self) -> f64 {
        let leg = self.thigh + self.shin;
        let max_reach = REACH * leg;
        let dt = 0.01;
        let mut samples = Vec::new();
        for foot in [LEFT, RIGHT] {
            for st in &self.stances[foot] {
                if st.kind != StanceKind::Walk || st.end < 0.0 || st.start > self.cfg.duration_s {
                    continue;
                }
                let mut t = st.start;
                while t <= st.end {
                    samples.push((foot, t, self.stance_pose(st, t).ankle));
                    t += dt;
                }
            }
        }
        let fits = |y: f64| {
            samples.iter().all(|&(foot, t, ankle)| {
                let hip = self.hip(foot, self.pelvis_with(t, y));
                norm3(sub3(hip, ankle)) <= max_reach
            })
        };
        let (mut lo, mut hi) = (0.4 * leg, self.y_stand + 0.05 * leg);
        if fits(hi) {
            return hi;
        }
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if fits(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    fn leg_ik(&self, hip: [f64; 3], target: [f64; 3], forward: [f64; 3]) -> (Quat, Quat) {
        let (l1, l2) = (self.thigh, self.shin);
        let mut d = sub3(target, hip);
        let mut dist = norm3(d);
        let max = (l1 + l2) * 0.9999;
        if dist > max {
            d = scale3(d, max / dist);
            dist = max;
        }
        let min = (l1 - l2).abs() + 1e-6;
        if dist < min {
            d = scale3(d, min / dist.max(1e-12));
            dist = min;
        }
        let u = scale3(d, 1.0 / dist);
        let mut f = sub3(forward, scale3(u, dot3(forward, u)));
        if norm3(f) < 1e-6 {
            f = cross3(u, [1.0, 0.0, 0.0]);
        }
        let f = normalize3(f);
        let cos_a = ((l1 * l1 + dist * dist - l2 * l2) / (2.0 * l1 * dist)).clamp(-1.0, 1.0);
        let sin_a = (1.0 - cos_a * cos_a).sqrt();
        let knee = add3(hip, scale3(add3(scale3(u, cos_a), scale3(f, sin_a)), l1));
        let lateral = normalize3(cross3(f, u));
        let frame = |from: [f64; 3], to: [f64; 3]| {
            let up = normalize3(sub3(from, to));
            Quat::from_basis(lateral, up, cross3(lateral, up))
        };
        (frame(hip, knee), frame(knee, add3(hip, d)))
    }

    fn upper_body(&self, t: f64, rot: &mut [Quat]) {
        let st = &self.style;
        let r = self.speed_ramp(t);
        let w = 2.0 * PI / self.cfg.cycle_s;
        let cyc = (w * (t - st.phase_s)).cos();
        let twist = -0.3 * r * st.pelvis_yaw_rad * (w * (t - st.phase_s)).sin();
        for j in SPINE {
            rot[j] = Quat::from_yaw(twist);
        }
        rot[T8] = Quat::from_axis_angle([1.0, 0.0, 0.0], st.lean_rad);
        rot[NECK] = Quat::from_axis_angle([1.0, 0.0, 0.0], -st.lean_rad);
        let hang = 80f64.to_radians();
        for foot in [LEFT, RIGHT] {
            let side = if foot == LEFT { 1.0 } else { -1.0 };
            // Right arm forward at left heel strike.
            let swing = side * r * st.arm_swing_rad * cyc;
            rot[UPPER_ARM[foot]] = Quat::from_axis_angle([1.0, 0.0, 0.0], swing)
                * Quat::from_axis_angle([0.0, 0.0, 1.0], -side * hang);
            rot[FORE_ARM[foot]] = Quat::from_axis_angle([0.0, 1.0, 0.0], -side * st.elbow_rad);
        }
    }

    fn frame_rotations(&self, t: f64) -> ([f64; 3], Vec<Quat>) {
        let mut rot = vec![Quat::IDENTITY; DEFAULT_JOINTS];
        let pelvis = self.pelvis(t);
        rot[PELVIS] = pelvis.1;
        self.upper_body(t, &mut rot);
        let forward = pelvis.1.rotate([0.0, 0.0, 1.0]);
        for foot in [LEFT, RIGHT] {
            let pose = self.foot_pose(foot, t);
            let hip = self.hip(foot, pelvis);
            let (thigh, shin) = self.leg_ik(hip, pose.ankle, forward);
            let foot_q = foot_rotation(pose.yaw, pose.pitch);
            rot[UPPER_LEG[foot]] = pelvis.1.conj() * thigh;
            rot[LOWER_LEG[foot]] = thigh.conj() * shin;
            rot[FOOT[foot]] = shin.conj() * foot_q;
        }
        (pelvis.0, rot)
    }

    fn motion(&self, rate: f64) -> LocalMotion {
        let frames = frame_count(self.cfg.duration_s, rate);
        let mut m = LocalMotion {
            root_translation: Array2::zeros((frames, 3)),
            rotations: Array3::zeros((frames, DEFAULT_JOINTS, 4)),
            rate_hz: rate,
        };
        for f in 0..frames {
            let (root, rot) = self.frame_rotations(f as f64 / rate);
            for c in 0..3 {
                m.root_translation[[f, c]] = root[c] as f32;
            }
            for (j, q) in rot.into_iter().enumerate() {
                m.set_rotation(f, j, q.normalized());
            }
        }
        m
    }

    /// Heel, toe and gray force of one foot, body-weight fractions.
    fn foot_force(&self, foot: usize, t: f64) -> [f64; 3] {
        let Some(st) = self.active_stance(foot, t) else {
            return [0.0; 3];
        };
        let tau = t - st.start;
        match st.kind {
            StanceKind::Walk => {
                let p = self.walk_force(tau);
                let rest = (1.0 - GRAY_SHARE) * p;
                let (heel, toe) = if tau < self.steps.toe_on {
                    (rest, 0.0)
                } else if tau < self.steps.heel_off {
                    (0.5 * rest, 0.5 * rest)
                } else {
                    (0.0, rest)
                };
                [heel, toe, GRAY_SHARE * p]
            }
            StanceKind::Stand => {
                let accel = self.jump_eval(t).map_or(0.0, |(_, a)| a);
                let mut p = 0.5 * (1.0 + accel / GRAVITY).max(0.0);
                if !st.flight_before {
                    p = p.min(self.slope * tau);
                }
                if !st.flight_after {
                    p = p.min(self.slope * (st.end - t));
                }
                let p = p.max(0.0);
                [0.5 * p, 0.4 * p, GRAY_SHARE * p]
            }
        }
    }

    fn contact_at(&self, foot: usize, t: f64) -> [u8; 2] {
        match self.active_stance(foot, t) {
            None => [0, 0],
            Some(st) if st.kind == StanceKind::Stand => [1, 1],
            Some(st) => {
                let u = (t - st.start) / (st.end - st.start);
                [u8::from(u < HEEL_OFF_FRACTION), u8::from(u >= TOE_ON_FRACTION)]
            }
        }
    }

    fn insole(&self, layout: &InsoleLayout) -> (VgrfSequence, ContactSequence) {
        let rate = self.cfg.rate_hz;
        let frames = frame_count(self.cfg.duration_s, rate);
        let mut vgrf = VgrfSequence::zeros(frames, rate);
        let mut contacts = ContactSequence::zeros(frames, rate);
        for f in 0..frames {
            let t = f as f64 / rate;
            for foot in [LEFT, RIGHT] {
                let [heel, toe, gray] = self.foot_force(foot, t);
                let groups = [
                    (CellGroup::Heel, heel, &HEEL_WEIGHTS[..]),
                    (CellGroup::Toe, toe, &TOE_WEIGHTS[..]),
                ];
                for (group, force, weights) in groups {
                    for (k, c) in layout.cells_in(foot, group).enumerate() {
                        vgrf.values[[f, foot, c]] = (force * weights[k % weights.len()]) as f32;
                    }
                }
                let grays: Vec<usize> = layout.cells_in(foot, CellGroup::Gray).collect();
                for &c in &grays {
                    vgrf.values[[f, foot, c]] = (gray / grays.len() as f64) as f32;
                }
                let lab = self.contact_at(foot, t);
                contacts.labels[[f, foot, HEEL]] = lab[0];
                contacts.labels[[f, foot, TOE]] = lab[1];
            }
        }
        (vgrf, contacts)
    }

    fn imu<R: Rng + ?Sized>(&self, rng: &mut R) -> ImuSequence {
        let rate = self.cfg.rate_hz;
        let frames = frame_count(self.cfg.duration_s, rate);
        let h = 1.0 / rate;
        let noise = Normal::new(0.0, 0.02).expect("valid std");
        let mut accel = Array3::zeros((frames, 2, 3));
        for f in 0..frames {
            let t = f as f64 / rate;
            for foot in [LEFT, RIGHT] {
                let a = self.foot_pose(foot, t - h).ankle;
                let b = self.foot_pose(foot, t).ankle;
                let c = self.foot_pose(foot, t + h).ankle;
                for k in 0..3 {
                    let g = if k == 1 { GRAVITY } else { 0.0 };
                    let v = (a[k] - 2.0 * b[k] + c[k]) / (h * h) + g + noise.sample(rng);
                    accel[[f, foot, k]] = v as f32;
                }
            }
        }
        ImuSequence { accel, rate_hz: rate }
    }

    fn take(&self) -> Result<Take> {
        let cfg = &self.cfg;
        let skeleton = default_skeleton(cfg.height_m);
        let layout = InsoleLayout::approximate();
        let mocap_rate = cfg.mocap_rate_hz.unwrap_or(cfg.rate_hz);
        let motion = self.motion(mocap_rate);
        let poses = forward_kinematics(&skeleton, &motion)?;
        let (vgrf, contacts) = self.insole(&layout);
        let meta = SubjectMeta {
            id: format!("synth-{}", cfg.seed),
            weight_kg: cfg.weight_kg,
            height_m: cfg.height_m,
        };
        let bw = meta.body_weight_newtons();
        let mut pressure = Array3::zeros(vgrf.values.raw_dim());
        for ((f, foot, c), v) in vgrf.values.indexed_iter() {
            pressure[[f, foot, c]] = (*v as f64 * bw / layout.feet[foot][c].area_cm2) as f32;
        }
        let mut noise_rng = rng::stream(cfg.seed, &[0x1a0]);
        let imu = self.imu(&mut noise_rng);
        Ok(Take {
            skeleton,
            local_motion: Some(motion),
            poses,
            pressure: Some(PressureSequence {
                values: pressure,
                rate_hz: cfg.rate_hz,
            }),
            vgrf: Some(vgrf),
            contacts: Some(contacts),
            imu: Some(imu),
            meta,
            original_poses: None,
            layout: None,
            contact_params: None,
            synchronized: (mocap_rate - cfg.rate_hz).abs() < 1e-9,
        })
    }
}

fn frame_count(duration: f64, rate: f64) -> usize {
    ((duration * rate) + 1e-9).floor() as usize
}

/// Generates one take from `cfg`; style details are drawn from `cfg.seed`.
pub fn generate_gait(cfg: &GaitConfig) -> Result<Take> {
    let style = GaitStyle::sample(&mut rng::seeded(cfg.seed), cfg.cycle_s);
    generate_with_style(cfg, style)
}

pub fn generate_with_style(cfg: &GaitConfig, style: GaitStyle) -> Result<Take> {
    Generator::new(cfg, style)?.take()
}

/// Two walking takes sharing one contact schedule but differing in speed and
/// style.
pub fn generate_blend_ground_truth<R: Rng + ?Sized>(cfg: &GaitConfig, rng: &mut R) -> Result<(Take, Take)> {
    let mut base = cfg.clone();
    base.jump_markers = false;
    base.mocap_rate_hz = None;
    let style_a = GaitStyle::sample(rng, base.cycle_s);
    let mut style_b = GaitStyle::sample(rng, base.cycle_s);
    style_b.phase_s = style_a.phase_s;
    let factor = rng.random_range(1.35..1.6);
    let mut fast = base.clone();
    fast.speed_mps = (base.speed_mps * factor).min(2.2);
    if fast.speed_mps - base.speed_mps < 0.2 {
        fast.speed_mps = base.speed_mps * 0.65;
    }
    Ok((generate_with_style(&base, style_a)?, generate_with_style(&fast, style_b)?))
}

/// Configurations of `generate_corpus`: varied walking takes totalling
/// `minutes`, each at most `take_s` long.
pub fn corpus_configs(minutes: f64, rate_hz: f64, seed: u64, take_s: f64) -> Result<Vec<GaitConfig>> {
    if !(minutes > 0.0) || !(take_s >= 5.0) {
        return Err(Error::InvalidArgument(format!(
            "corpus needs minutes > 0 and takes of at least 5 s, got {minutes} min, {take_s} s"
        )));
    }
    let total = minutes * 60.0;
    let count = (total / take_s).ceil() as usize;
    Ok((0..count)
        .map(|i| {
            let mut r = rng::stream(seed, &[0xc0, i as u64]);
            let duration = (total - i as f64 * take_s).min(take_s).max(5.0);
            let radius: f64 = r.random_range(3.0..8.0);
            GaitConfig {
                duration_s: duration,
                rate_hz,
                mocap_rate_hz: None,
                speed_mps: r.random_range(0.9..1.6),
                cycle_s: r.random_range(0.95..1.25),
                duty_factor: r.random_range(0.58..0.66),
                weight_kg: r.random_range(50.0..100.0),
                height_m: r.random_range(1.55..1.95),
                turn_radius_m: Some(if r.random_bool(0.5) { radius } else { -radius }),
                heading_rad: r.random_range(0.0..2.0 * PI),
                jump_markers: false,
                seed: r.random(),
            }
        })
        .collect())
}

pub fn generate_corpus(minutes: f64, rate_hz: f64, seed: u64, take_s: f64) -> Result<Vec<Take>> {
    corpus_configs(minutes, rate_hz, seed, take_s)?.iter().map(generate_gait).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grf::{contact_labels, total_vgrf};

    fn runs(labels: &[u8]) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut start = None;
        for (i, &v) in labels.iter().chain(std::iter::once(&0)).enumerate() {
            match (start, v) {
                (None, 1) => start = Some(i),
                (Some(s), 0) => {
                    out.push((s, i));
                    start = None;
                }
                _ => {}
            }
        }
        out
    }

    fn channel(c: &ContactSequence, foot: usize, loc: usize) -> Vec<u8> {
        (0..c.frames()).map(|f| c.labels[[f, foot, loc]]).collect()
    }

    #[test]
    fn skeleton_is_valid_and_symmetric() {
        let skel = default_skeleton(1.75);
        assert!(skel.check().is_empty());
        assert_eq!(skel.num_joints(), 23);
        for (i, name) in JOINT_NAMES.iter().enumerate() {
            if let Some(rest) = name.strip_prefix("Left") {
                let j = JOINT_NAMES.iter().position(|n| *n == format!("Right{rest}")).unwrap();
                let (a, b) = (skel.offset(i), skel.offset(j));
                assert!((a[0] + b[0]).abs() < 1e-6 && (a[1] - b[1]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rejects_invalid_config() {
        for cfg in [
            GaitConfig { duty_factor: 1.0, ..Default::default() },
            GaitConfig { duty_factor: 0.0, ..Default::default() },
            GaitConfig { duration_s: 1.5, ..Default::default() },
            GaitConfig { jump_markers: true, duration_s: 8.0, ..Default::default() },
        ] {
            assert!(matches!(generate_gait(&cfg), Err(Error::Validation(_))));
        }
    }

    #[test]
    fn contact_per_cycle_matches_duty() {
        let cfg = GaitConfig {
            duty_factor: 0.6,
            cycle_s: 1.2,
            duration_s: 12.0,
            ..Default::default()
        };
        let take = generate_gait(&cfg).unwrap();
        let c = take.contacts.unwrap();
        for foot in [LEFT, RIGHT] {
            let any: Vec<u8> = (0..c.frames())
                .map(|f| c.labels[[f, foot, HEEL]] | c.labels[[f, foot, TOE]])
                .collect();
            let r = runs(&any);
            for &(a, b) in &r[1..r.len() - 1] {
                assert!(((b - a) as i64 - 72).abs() <= 1, "run {a}..{b}");
            }
        }
    }

    #[test]
    fn swing_has_no_force_and_lifted_feet() {
        let take = generate_gait(&GaitConfig::default()).unwrap();
        let c = take.contacts.as_ref().unwrap();
        let v = take.vgrf.as_ref().unwrap();
        let fj = take.skeleton.foot_joints;
        let mut swing = 0;
        for f in 0..take.frames() {
            for foot in [LEFT, RIGHT] {
                if c.labels[[f, foot, HEEL]] == 0 && c.labels[[f, foot, TOE]] == 0 {
                    swing += 1;
                    let total: f32 = (0..CELLS).map(|k| v.values[[f, foot, k]]).sum();
                    assert_eq!(total, 0.0);
                    let h = 0.5 * (take.poses.position(f, fj.get(foot, HEEL))[1]
                        + take.poses.position(f, fj.get(foot, TOE))[1]);
                    assert!(h > 0.0, "frame {f} foot {foot} height {h}");
                }
            }
        }
        assert!(swing > 100);
    }

    #[test]
    fn contact_function_recovers_schedule() {
        for seed in 0..4 {
            let cfg = GaitConfig {
                seed,
                speed_mps: 1.0 + 0.2 * seed as f64,
                duty_factor: 0.58 + 0.02 * seed as f64,
                ..Default::default()
            };
            let take = generate_gait(&cfg).unwrap();
            let truth = take.contacts.as_ref().unwrap();
            let est = contact_labels(
                take.vgrf.as_ref().unwrap(),
                &InsoleLayout::approximate(),
                &ContactParams::default(),
            )
            .unwrap();
            for foot in [LEFT, RIGHT] {
                for loc in [HEEL, TOE] {
                    let n = take.frames();
                    let interior = |r: Vec<(usize, usize)>| -> Vec<(usize, usize)> {
                        r.into_iter().filter(|&(a, b)| a > 2 && b + 2 < n).collect()
                    };
                    let a = interior(runs(&channel(truth, foot, loc)));
                    let b = interior(runs(&channel(&est, foot, loc)));
                    assert_eq!(a.len(), b.len(), "seed {seed} foot {foot} loc {loc}: {a:?} vs {b:?}");
                    for (x, y) in a.iter().zip(&b) {
                        assert!((x.0 as i64 - y.0 as i64).abs() <= 2, "{x:?} vs {y:?}");
                        assert!((x.1 as i64 - y.1 as i64).abs() <= 2, "{x:?} vs {y:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn stance_joints_are_pinned_to_the_ground() {
        let take = generate_gait(&GaitConfig::default()).unwrap();
        let c = take.contacts.as_ref().unwrap();
        let fj = take.skeleton.foot_joints;
        for foot in [LEFT, RIGHT] {
            for loc in [HEEL, TOE] {
                let j = fj.get(foot, loc);
                for f in 1..take.frames() {
                    if c.labels[[f, foot, loc]] == 1 {
                        let p = take.poses.position(f, j);
                        assert!(p[1].abs() < 1e-4, "height {} at {f}", p[1]);
                        if c.labels[[f - 1, foot, loc]] == 1 {
                            let q = take.poses.position(f - 1, j);
                            assert!(norm3(sub3(p, q)) < 1e-4);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn mean_total_force_is_one_body_weight() {
        let cfg = GaitConfig {
            duration_s: 22.0,
            ..Default::default()
        };
        let take = generate_gait(&cfg).unwrap();
        let total = total_vgrf(take.vgrf.as_ref().unwrap());
        let n = (20.0 * cfg.rate_hz) as usize;
        let mean: f64 = (0..n).map(|f| total[[f, 0]] + total[[f, 1]]).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.03, "mean {mean}");
        assert!(total.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn jump_flight_is_ballistic() {
        let cfg = GaitConfig {
            jump_markers: true,
            duration_s: 14.0,
            ..Default::default()
        };
        let take = generate_gait(&cfg).unwrap();
        let (to, land) = jump_times(&cfg)[0];
        let mid = ((to + land) / 2.0 * cfg.rate_hz).round() as usize;
        let fj = take.skeleton.foot_joints;
        let y = |f: usize| take.poses.position(f, fj.left_ankle)[1];
        let acc = (y(mid - 1) - 2.0 * y(mid) + y(mid + 1)) * cfg.rate_hz * cfg.rate_hz;
        assert!((acc + GRAVITY).abs() < 1e-2, "accel {acc}");
        assert!(y(mid) > 0.1);
        let v = take.vgrf.as_ref().unwrap();
        let total = total_vgrf(v);
        assert_eq!(total[[mid, 0]] + total[[mid, 1]], 0.0);
        let stand: Vec<f64> = (0..take.frames())
            .filter(|&f| {
                let t = f as f64 / cfg.rate_hz;
                (t > to - 2.0 && t < to - 0.01) || (t > land + 0.01 && t < land + 1.0)
            })
            .map(|f| total[[f, 0]] + total[[f, 1]])
            .collect();
        assert!(stand.iter().all(|&v| v > 0.2), "min {}", stand.iter().cloned().fold(f64::MAX, f64::min));
        let peak = total.rows().into_iter().map(|r| r[0] + r[1]).fold(0.0, f64::max);
        assert!(peak > 2.3, "peak {peak}");
    }

    #[test]
    fn blend_pair_shares_schedule() {
        let mut r = rng::seeded(3);
        let (a, b) = generate_blend_ground_truth(&GaitConfig::default(), &mut r).unwrap();
        assert_eq!(a.contacts, b.contacts);
        let n = a.frames();
        let mut dist = 0.0;
        for f in 0..n {
            for j in 0..23 {
                dist += norm3(sub3(a.poses.position(f, j), b.poses.position(f, j)));
            }
        }
        assert!(dist / (n * 23) as f64 > 0.01);
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = GaitConfig {
            duration_s: 3.0,
            seed: 11,
            ..Default::default()
        };
        assert_eq!(generate_gait(&cfg).unwrap(), generate_gait(&cfg).unwrap());
    }
}
