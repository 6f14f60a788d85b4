//! Footskate cleanup: contact runs become positional constraints that an
//! optimization-based IK enforces on joint rotations and root translation.
//!
//! Energy, each term averaged over the rows it sums:
//! `w_constraint · mean weight·‖FK(joint) − anchor‖²` over constrained frames
//! `+ w_pose · mean geodesic²(q, q_original)` over frames and joints
//! `+ w_smooth · mean ‖Δ²(position − position_original)‖²` over frames and joints,
//! minimized with Adam and step halving on rejected steps.

use ndarray::{Array3, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::footskate;
use crate::grf::{contact_analysis, ContactParams};
use crate::kinematics::forward_kinematics;
use crate::nn::{predict, Graph, Model, Scalar, Tape, Var};
use crate::quat::*;
use crate::types::*;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const DIVERGENCE_STEPS: usize = 50;
const STOP_REL_DECREASE: f64 = 1e-6;
/// Relative energy increase treated as rounding at a minimum.
const ROUNDOFF: f64 = 1e-12;
/// Energies below this are treated as zero.
const ENERGY_FLOOR: f64 = 1e-20;

/// One maximal contact run of a foot location, frames `t0..=t1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactConstraint {
    pub foot: usize,
    pub location: usize,
    pub joint: usize,
    pub t0: usize,
    pub t1: usize,
    pub anchor: [f64; 3],
    pub weight: f64,
}

/// Anchors and strengths for every contact run. With per-location forces
/// (`T×2×2`, body weights) the anchor is the force-weighted mean position and
/// the strength is the mean force; otherwise both use uniform weights.
pub fn derive_constraints(
    contacts: &ContactSequence,
    poses: &PoseSequence,
    skeleton: &Skeleton,
    location_force: Option<ArrayView3<f64>>,
) -> Result<Vec<ContactConstraint>> {
    let t = contacts.frames();
    if poses.frames() != t {
        return Err(Error::Shape(format!("{t} contact frames for {} pose frames", poses.frames())));
    }
    if let Some(f) = &location_force {
        if f.shape() != [t, 2, 2] {
            return Err(Error::Shape(format!("location force shape {:?}, expected [{t}, 2, 2]", f.shape())));
        }
    }
    let mut out = Vec::new();
    for foot in 0..2 {
        for location in 0..2 {
            let joint = skeleton.foot_joints.get(foot, location);
            let mut f = 0;
            while f < t {
                if contacts.labels[[f, foot, location]] == 0 {
                    f += 1;
                    continue;
                }
                let t0 = f;
                while f < t && contacts.labels[[f, foot, location]] != 0 {
                    f += 1;
                }
                let t1 = f - 1;
                let forces: Vec<f64> = (t0..=t1)
                    .map(|k| location_force.as_ref().map_or(1.0, |lf| lf[[k, foot, location]].max(0.0)))
                    .collect();
                let total: f64 = forces.iter().sum();
                let uniform = !(total > 1e-12);
                let mut anchor = [0.0; 3];
                for (k, &w) in (t0..=t1).zip(&forces) {
                    let w = if uniform { 1.0 } else { w / total };
                    let p = poses.position(k, joint);
                    anchor[0] += w * p[0];
                    anchor[2] += w * p[2];
                }
                if uniform {
                    let n = (t1 - t0 + 1) as f64;
                    anchor[0] /= n;
                    anchor[2] /= n;
                }
                let weight = if location_force.is_some() {
                    total / (t1 - t0 + 1) as f64
                } else {
                    1.0
                };
                out.push(ContactConstraint {
                    foot,
                    location,
                    joint,
                    t0,
                    t1,
                    anchor,
                    weight,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IkWeights {
    pub w_constraint: f64,
    pub w_pose: f64,
    pub w_smooth: f64,
    pub iterations: usize,
    /// Initial Adam step, halved on every rejected step.
    pub step: f64,
}

impl Default for IkWeights {
    fn default() -> Self {
        IkWeights {
            w_constraint: 1.0,
            w_pose: 0.1,
            w_smooth: 1.0,
            iterations: 500,
            step: 1e-2,
        }
    }
}

impl IkWeights {
    pub fn check(&self) -> Vec<String> {
        let mut issues = Vec::new();
        let ws = [self.w_constraint, self.w_pose, self.w_smooth];
        if ws.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            issues.push(format!("ik: weights {ws:?} must be finite and nonnegative"));
        }
        if !ws.iter().any(|&w| w > 0.0) {
            issues.push("ik: at least one weight must be positive".into());
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            issues.push(format!("ik: step {} must be positive", self.step));
        }
        issues
    }
}

/// The IK energy as a differentiable graph over `[root shift (T×3), q_0 … q_{J−1} (T×4)]`.
/// Positions are expressed relative to the input root trajectory, which keeps
/// magnitudes near one meter for single-precision evaluation.
#[derive(Debug, Clone)]
pub struct IkProblem {
    parents: Vec<Option<usize>>,
    offsets: Vec<[f64; 3]>,
    frames: usize,
    /// Reference local rotations per joint, `T×4` row-major.
    reference: Vec<Vec<f64>>,
    /// Input root translation per frame.
    root: Vec<[f64; 3]>,
    /// Input joint positions per joint, `T×3` row-major.
    original: Vec<Vec<f64>>,
    constraints: Vec<ContactConstraint>,
    weights: IkWeights,
}

impl IkProblem {
    pub fn new(
        motion: &LocalMotion,
        skeleton: &Skeleton,
        constraints: &[ContactConstraint],
        weights: IkWeights,
    ) -> Result<Self> {
        let j = skeleton.num_joints();
        let t = motion.frames();
        if motion.joints() != j {
            return Err(Error::Shape(format!("motion has {} joints, skeleton {j}", motion.joints())));
        }
        for c in constraints {
            if c.joint >= j || c.t0 > c.t1 || c.t1 >= t {
                return Err(Error::InvalidArgument(format!(
                    "constraint on joint {} frames {}..={} outside {t} frames × {j} joints",
                    c.joint, c.t0, c.t1
                )));
            }
            if !c.anchor.iter().all(|v| v.is_finite()) || !(c.weight >= 0.0 && c.weight.is_finite()) {
                return Err(Error::NonFinite(format!("constraint on joint {} frames {}..={}", c.joint, c.t0, c.t1)));
            }
        }
        let reference = (0..j)
            .map(|k| {
                (0..t)
                    .flat_map(|f| motion.rotation(f, k).normalized().to_array())
                    .collect()
            })
            .collect();
        let mut problem = IkProblem {
            original: Vec::new(),
            root: (0..t).map(|f| motion.root(f)).collect(),
            parents: (0..j).map(|k| skeleton.parent(k)).collect(),
            offsets: (0..j).map(|k| skeleton.offset(k)).collect(),
            frames: t,
            reference,
            constraints: constraints.to_vec(),
            weights,
        };
        let mut tape = Tape::<f64>::new();
        let inputs: Vec<Var> = problem
            .initial()
            .into_iter()
            .zip(problem.shapes())
            .map(|(v, (r, c))| tape.constant(v, r, c))
            .collect();
        let pos = problem.positions(&mut tape, &inputs);
        problem.original = pos.iter().map(|&p| tape.value(p).to_vec()).collect();
        Ok(problem)
    }

    /// Initial variables: zero root shift and normalized local rotations.
    pub fn initial(&self) -> Vec<Vec<f64>> {
        std::iter::once(vec![0.0; 3 * self.frames])
            .chain(self.reference.iter().cloned())
            .collect()
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        std::iter::once((self.frames, 3))
            .chain(self.parents.iter().map(|_| (self.frames, 4)))
            .collect()
    }

    fn positions<T: Scalar>(&self, tape: &mut Tape<T>, inputs: &[Var]) -> Vec<Var> {
        let t = self.frames;
        let mut global: Vec<Var> = Vec::with_capacity(self.parents.len());
        let mut pos: Vec<Var> = Vec::with_capacity(self.parents.len());
        for (k, parent) in self.parents.iter().enumerate() {
            let local = tape.normalize_rows(inputs[k + 1]);
            match *parent {
                None => {
                    global.push(local);
                    pos.push(inputs[0]);
                }
                Some(p) => {
                    let o = self.offsets[k].map(T::lit);
                    let offset = tape.constant((0..t).flat_map(|_| o).collect(), t, 3);
                    let r = tape.qrot(global[p], offset);
                    let q = tape.qmul(global[p], local);
                    pos.push(tape.add(pos[p], r));
                    global.push(q);
                }
            }
        }
        pos
    }
}

impl Graph for IkProblem {
    fn build<T: Scalar>(&self, tape: &mut Tape<T>, inputs: &[Var]) -> Var {
        let w = &self.weights;
        let pos = self.positions(tape, inputs);
        let mut terms = Vec::new();
        let constrained: usize = self.constraints.iter().map(|c| c.t1 - c.t0 + 1).sum();
        let joints = self.parents.len() as f64;
        if w.w_constraint > 0.0 {
            let unit = w.w_constraint / constrained.max(1) as f64;
            for c in &self.constraints {
                // One frame of horizontal support on each side keeps the
                // central-difference velocity of the run's end frames at zero.
                let (a, b) = (c.t0.saturating_sub(1), (c.t1 + 1).min(self.frames - 1));
                let sel = tape.rows(pos[c.joint], (a..=b).collect());
                let anchor: Vec<T> = (a..=b)
                    .flat_map(|f| sub3(c.anchor, self.root[f]).map(T::lit))
                    .collect();
                let d = tape.sub_const(sel, &anchor);
                let k = T::lit(unit * c.weight);
                let rw = (a..=b)
                    .flat_map(|f| {
                        let y = if (c.t0..=c.t1).contains(&f) { k } else { T::zero() };
                        [k, y, k]
                    })
                    .collect();
                terms.push(tape.weighted_sum_sq(d, Some(rw)));
            }
        }
        if w.w_pose > 0.0 {
            let unit = T::lit(w.w_pose / (self.frames as f64 * joints));
            for (k, r) in self.reference.iter().enumerate() {
                let q = tape.normalize_rows(inputs[k + 1]);
                let g = tape.geodesic_sq(q, r.iter().map(|&v| T::lit(v)).collect());
                terms.push(tape.scale(g, unit));
            }
        }
        if w.w_smooth > 0.0 && self.frames >= 3 {
            let unit = T::lit(w.w_smooth / ((self.frames - 2) as f64 * joints));
            for (&p, o) in pos.iter().zip(&self.original) {
                let o: Vec<T> = o.iter().map(|&v| T::lit(v)).collect();
                let shift = tape.sub_const(p, &o);
                let d = tape.diff2(shift);
                let s = tape.sum_sq(d);
                terms.push(tape.scale(s, unit));
            }
        }
        let mut e = match terms.first() {
            Some(&e) => e,
            None => tape.constant(vec![T::zero()], 1, 1),
        };
        for &term in &terms[1.min(terms.len())..] {
            e = tape.add(e, term);
        }
        e
    }
}

fn energy_and_grad(problem: &IkProblem, vars: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
    let mut tape = Tape::<f64>::new();
    let inputs: Vec<Var> = vars
        .iter()
        .zip(problem.shapes())
        .map(|(v, (r, c))| tape.param(v.clone(), r, c))
        .collect();
    let e = problem.build(&mut tape, &inputs);
    let mut grads = tape.backward(e);
    let g = inputs
        .iter()
        .zip(vars)
        .map(|(&v, x)| grads.take(v).unwrap_or_else(|| vec![0.0; x.len()]))
        .collect();
    (tape.scalar(e), g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkSolution {
    pub motion: LocalMotion,
    pub iterations: usize,
    /// Energy after every accepted step, starting with the initial energy.
    pub energies: Vec<f64>,
}

impl IkSolution {
    pub fn final_energy(&self) -> f64 {
        *self.energies.last().expect("initial energy")
    }
}

/// Minimizes the IK energy from the input motion.
pub fn solve_ik(
    motion: &LocalMotion,
    skeleton: &Skeleton,
    constraints: &[ContactConstraint],
    weights: &IkWeights,
) -> Result<IkSolution> {
    let issues = weights.check();
    if !issues.is_empty() {
        return Err(Error::Validation(issues));
    }
    let problem = IkProblem::new(motion, skeleton, constraints, *weights)?;
    let mut x = problem.initial();
    let (mut e, mut g) = energy_and_grad(&problem, &x);
    if !e.is_finite() {
        return Err(Error::NonFinite("initial IK energy".into()));
    }
    let mut energies = vec![e];
    let mut m: Vec<Vec<f64>> = x.iter().map(|v| vec![0.0; v.len()]).collect();
    let mut v = m.clone();
    let mut accepted = 0i32;
    let mut lr = weights.step;
    let mut rejected = 0usize;
    let mut iterations = 0;
    let update_moments = |m: &mut Vec<Vec<f64>>, v: &mut Vec<Vec<f64>>, g: &[Vec<f64>]| {
        for ((mi, vi), gi) in m.iter_mut().zip(v.iter_mut()).zip(g) {
            for ((a, b), &d) in mi.iter_mut().zip(vi.iter_mut()).zip(gi) {
                *a = ADAM_BETA1 * *a + (1.0 - ADAM_BETA1) * d;
                *b = ADAM_BETA2 * *b + (1.0 - ADAM_BETA2) * d * d;
            }
        }
    };
    update_moments(&mut m, &mut v, &g);
    accepted += 1;
    while iterations < weights.iterations && e > ENERGY_FLOOR {
        iterations += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(accepted);
        let c2 = 1.0 - ADAM_BETA2.powi(accepted);
        let mut cand = x.clone();
        for ((xi, mi), vi) in cand.iter_mut().zip(&m).zip(&v) {
            for ((p, &a), &b) in xi.iter_mut().zip(mi).zip(vi) {
                *p -= lr * (a / c1) / ((b / c2).sqrt() + ADAM_EPS);
            }
        }
        for q in &mut cand[1..] {
            for row in q.chunks_exact_mut(4) {
                let n = row.iter().map(|a| a * a).sum::<f64>().sqrt();
                row.iter_mut().for_each(|a| *a /= n);
            }
        }
        let (e_new, g_new) = energy_and_grad(&problem, &cand);
        if !e_new.is_finite() || e_new > e {
            if e_new.is_finite() && e_new - e <= ROUNDOFF * e + ENERGY_FLOOR {
                break;
            }
            rejected += 1;
            if rejected >= DIVERGENCE_STEPS {
                return Err(Error::Diverged {
                    steps: rejected,
                    energy: e_new,
                });
            }
            lr *= 0.5;
            for (mi, vi) in m.iter_mut().zip(v.iter_mut()) {
                mi.iter_mut().for_each(|a| *a = 0.0);
                vi.iter_mut().for_each(|a| *a = 0.0);
            }
            update_moments(&mut m, &mut v, &g);
            accepted = 1;
            continue;
        }
        rejected = 0;
        lr = (lr * 1.25).min(weights.step);
        let rel = (e - e_new) / e;
        x = cand;
        e = e_new;
        g = g_new;
        energies.push(e);
        update_moments(&mut m, &mut v, &g);
        accepted += 1;
        if rel < STOP_REL_DECREASE && lr >= weights.step {
            break;
        }
    }
    log::debug!("ik: {iterations} iterations, energy {} -> {e}", energies[0]);
    let mut out = motion.clone();
    for f in 0..problem.frames {
        for c in 0..3 {
            out.root_translation[[f, c]] = (problem.root[f][c] + x[0][3 * f + c]) as f32;
        }
        for k in 0..motion.joints() {
            let r = &x[k + 1][4 * f..4 * f + 4];
            out.set_rotation(f, k, Quat::new(r[0], r[1], r[2], r[3]).normalized());
        }
    }
    Ok(IkSolution {
        motion: out,
        iterations,
        energies,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanupReport {
    pub constraints: usize,
    pub footskate_before: f64,
    pub footskate_after: f64,
    /// Mean joint displacement between input and output poses, meters.
    pub mean_deviation_m: f64,
    pub iterations: usize,
    pub initial_energy: f64,
    pub final_energy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CleanupOutput {
    pub motion: LocalMotion,
    pub poses: PoseSequence,
    pub contacts: ContactSequence,
    pub constraints: Vec<ContactConstraint>,
    pub report: CleanupReport,
}

fn mean_deviation(a: &PoseSequence, b: &PoseSequence) -> f64 {
    let n = a.frames() * a.joints();
    if n == 0 {
        return 0.0;
    }
    let mut sum = 0.0;
    for t in 0..a.frames() {
        for j in 0..a.joints() {
            sum += norm3(sub3(a.position(t, j), b.position(t, j)));
        }
    }
    sum / n as f64
}

/// Cleanup driven by given contacts and optional per-location forces.
pub fn cleanup_with_contacts(
    motion: &LocalMotion,
    skeleton: &Skeleton,
    contacts: &ContactSequence,
    location_force: Option<ArrayView3<f64>>,
    weights: &IkWeights,
) -> Result<CleanupOutput> {
    let before = forward_kinematics(skeleton, motion)?;
    let constraints = derive_constraints(contacts, &before, skeleton, location_force)?;
    let sol = solve_ik(motion, skeleton, &constraints, weights)?;
    let after = forward_kinematics(skeleton, &sol.motion)?;
    let report = CleanupReport {
        constraints: constraints.len(),
        footskate_before: footskate(&before, contacts, skeleton)?,
        footskate_after: footskate(&after, contacts, skeleton)?,
        mean_deviation_m: mean_deviation(&before, &after),
        iterations: sol.iterations,
        initial_energy: sol.energies[0],
        final_energy: sol.final_energy(),
    };
    Ok(CleanupOutput {
        motion: sol.motion,
        poses: after,
        contacts: contacts.clone(),
        constraints,
        report,
    })
}

/// Fully automatic cleanup: estimated vGRF, contacts from the contact
/// function, force-weighted constraints, then IK.
pub fn cleanup_pipeline(
    take: &Take,
    model: &Model,
    params: &ContactParams,
    weights: &IkWeights,
) -> Result<CleanupOutput> {
    if !model.config.variant.outputs_vgrf() {
        return Err(Error::InvalidArgument(format!(
            "cleanup needs a vGRF model, got variant {}",
            model.config.variant
        )));
    }
    let motion = take
        .local_motion
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("cleanup needs joint rotations".into()))?;
    let vgrf = predict(model, &take.poses)?;
    let analysis = contact_analysis(&vgrf, &take.layout_or_default(), params)?;
    cleanup_with_contacts(
        motion,
        &take.skeleton,
        &analysis.contacts,
        Some(analysis.location_force.view()),
        weights,
    )
}

/// Per-location forces as an owned array, for callers holding a vGRF sequence.
pub fn location_forces(vgrf: &VgrfSequence, layout: &InsoleLayout, params: &ContactParams) -> Result<(ContactSequence, Array3<f64>)> {
    let a = contact_analysis(vgrf, layout, params)?;
    Ok((a.contacts, a.location_force))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, GradCheckOptions, Tensor};
    use crate::perturb::{blend_pair, BlendPair, BlendSchedule, Segment};
    use crate::rng;
    use crate::synth::{default_skeleton, generate_blend_ground_truth, generate_gait, GaitConfig};

    fn seq_contacts(t: usize, runs: &[(usize, usize, usize, usize)]) -> ContactSequence {
        let mut c = ContactSequence::zeros(t, 100.0);
        for &(foot, loc, a, b) in runs {
            for f in a..=b {
                c.labels[[f, foot, loc]] = 1;
            }
        }
        c
    }

    fn poses_from(f: impl Fn(usize) -> [f64; 3], t: usize, joint: usize) -> PoseSequence {
        let mut positions = Array3::zeros((t, 23, 3));
        for k in 0..t {
            let p = f(k);
            for c in 0..3 {
                positions[[k, joint, c]] = p[c] as f32;
            }
        }
        PoseSequence {
            positions,
            rate_hz: 100.0,
        }
    }

    #[test]
    fn anchors_follow_weighted_means() {
        let skel = default_skeleton(1.75);
        let j = skel.foot_joints.get(LEFT, HEEL);
        let c = seq_contacts(20, &[(LEFT, HEEL, 5, 14)]);

        let still = poses_from(|_| [0.3, 0.02, -1.0], 20, j);
        let k = derive_constraints(&c, &still, &skel, None).unwrap();
        assert_eq!(k.len(), 1);
        let a = k[0].anchor;
        assert!((a[0] - 0.3).abs() < 1e-6 && a[1] == 0.0 && (a[2] + 1.0).abs() < 1e-6);
        assert_eq!((k[0].t0, k[0].t1, k[0].joint), (5, 14, j));

        let slide = poses_from(|f| [0.1 * f as f64, 0.0, 0.0], 20, j);
        let k = derive_constraints(&c, &slide, &skel, None).unwrap();
        assert!((k[0].anchor[0] - 0.95).abs() < 1e-6, "{:?}", k[0].anchor);

        let mut force = Array3::zeros((20, 2, 2));
        for f in 5..=14 {
            force[[f, LEFT, HEEL]] = (f - 5) as f64 / 9.0;
        }
        let k = derive_constraints(&c, &slide, &skel, Some(force.view())).unwrap();
        let num: f64 = (5..=14).map(|f| (f - 5) as f64 / 9.0 * 0.1 * f as f64).sum();
        let den: f64 = (5..=14).map(|f| (f - 5) as f64 / 9.0).sum();
        assert!((k[0].anchor[0] - num / den).abs() < 1e-6);
        assert!(k[0].anchor[0] > 0.95);
        assert!((k[0].weight - 0.5).abs() < 1e-12);
    }

    #[test]
    fn no_constraints_is_a_fixed_point() {
        let take = generate_gait(&GaitConfig {
            duration_s: 3.0,
            ..Default::default()
        })
        .unwrap();
        let m = take.local_motion.as_ref().unwrap().window(0, 40);
        let sol = solve_ik(&m, &take.skeleton, &[], &IkWeights::default()).unwrap();
        for f in 0..40 {
            for k in 0..m.joints() {
                assert!(sol.motion.rotation(f, k).angle_to(m.rotation(f, k)) < 1e-4);
            }
        }
    }

    #[test]
    fn single_anchor_is_reached() {
        let skel = default_skeleton(1.75);
        let take = generate_gait(&GaitConfig {
            duration_s: 3.0,
            ..Default::default()
        })
        .unwrap();
        let m = take.local_motion.as_ref().unwrap().window(100, 4);
        let poses = forward_kinematics(&skel, &m).unwrap();
        let j = skel.foot_joints.get(LEFT, TOE);
        let p = poses.position(2, j);
        let anchor = [p[0] + 0.05, 0.0, p[2] - 0.04];
        let cons = [ContactConstraint {
            foot: LEFT,
            location: TOE,
            joint: j,
            t0: 2,
            t1: 2,
            anchor,
            weight: 1.0,
        }];
        let w = IkWeights {
            w_pose: 0.0,
            w_smooth: 0.0,
            iterations: 3000,
            ..Default::default()
        };
        let sol = solve_ik(&m, &skel, &cons, &w).unwrap();
        let out = forward_kinematics(&skel, &sol.motion).unwrap();
        assert!(norm3(sub3(out.position(2, j), anchor)) < 1e-3, "{:?}", out.position(2, j));
        assert!(sol.energies.windows(2).all(|e| e[1] <= e[0]));
    }

    #[test]
    fn rotations_stay_unit_and_bones_keep_length() {
        let cfg = GaitConfig {
            duration_s: 6.0,
            ..Default::default()
        };
        let (a, b) = generate_blend_ground_truth(&cfg, &mut rng::seeded(2)).unwrap();
        let takes = vec![a, b];
        let pair = BlendPair {
            a: Segment { take: 0, start: 150 },
            b: Segment { take: 1, start: 150 },
            len: 80,
            matched: [true, true],
        };
        let blended = blend_pair(&takes, &pair, BlendSchedule::Smoothstep).unwrap();
        let out = cleanup_with_contacts(
            blended.local_motion.as_ref().unwrap(),
            &blended.skeleton,
            blended.contacts.as_ref().unwrap(),
            None,
            &IkWeights::default(),
        )
        .unwrap();
        for f in 0..80 {
            for k in 0..23 {
                assert!((out.motion.rotation(f, k).norm() - 1.0).abs() < 1e-6);
                if let Some(p) = blended.skeleton.parent(k) {
                    let d = norm3(sub3(out.poses.position(f, k), out.poses.position(f, p)));
                    assert!((d - blended.skeleton.bone_length(k)).abs() < 1e-5);
                }
            }
        }
        let r = &out.report;
        assert!(r.footskate_after <= r.footskate_before, "{r:?}");
        assert!(r.footskate_after < 0.2 * r.footskate_before, "{r:?}");
        assert!(r.mean_deviation_m < 0.05, "{r:?}");
    }

    #[test]
    fn heavy_pose_weight_keeps_input() {
        let take = generate_gait(&GaitConfig {
            duration_s: 3.0,
            ..Default::default()
        })
        .unwrap();
        let m = take.local_motion.as_ref().unwrap().window(50, 30);
        let poses = forward_kinematics(&take.skeleton, &m).unwrap();
        let j = take.skeleton.foot_joints.get(RIGHT, HEEL);
        let p = poses.position(10, j);
        let cons = [ContactConstraint {
            foot: RIGHT,
            location: HEEL,
            joint: j,
            t0: 5,
            t1: 15,
            anchor: [p[0] + 0.1, 0.0, p[2]],
            weight: 1.0,
        }];
        let w = IkWeights {
            w_pose: 1e6,
            w_smooth: 0.0,
            ..Default::default()
        };
        let sol = solve_ik(&m, &take.skeleton, &cons, &w).unwrap();
        let mut dev = 0.0;
        for f in 0..30 {
            for k in 0..m.joints() {
                dev += sol.motion.rotation(f, k).angle_to(m.rotation(f, k));
            }
        }
        assert!(dev / (30.0 * m.joints() as f64) < 1e-4);
    }

    #[test]
    fn energy_gradient_matches_differences() {
        let take = generate_gait(&GaitConfig {
            duration_s: 3.0,
            ..Default::default()
        })
        .unwrap();
        let m = take.local_motion.as_ref().unwrap().window(60, 5);
        let poses = forward_kinematics(&take.skeleton, &m).unwrap();
        let c = seq_contacts(5, &[(LEFT, HEEL, 0, 3), (RIGHT, TOE, 1, 4)]);
        let cons = derive_constraints(&c, &poses, &take.skeleton, None).unwrap();
        let problem = IkProblem::new(&m, &take.skeleton, &cons, IkWeights::default()).unwrap();
        let mut inputs: Vec<Tensor> = problem
            .initial()
            .into_iter()
            .zip(problem.shapes())
            .map(|(d, (r, c))| Tensor::new(d, r, c))
            .collect();
        let noise = Tensor::random(1, inputs.iter().map(|t| t.data.len()).sum(), -0.05, 0.05, 4);
        let mut k = 0;
        for t in &mut inputs {
            for v in &mut t.data {
                *v += noise.data[k];
                k += 1;
            }
        }
        let r = grad_check(&problem, &inputs, &GradCheckOptions::default());
        assert!(r.max_rel_error_f64 < 1e-6, "{r:?}");
        assert!(r.max_rel_error_f32 < 1e-4, "{r:?}");
    }

    #[test]
    fn clean_gait_with_true_forces_is_nearly_unchanged() {
        let take = generate_gait(&GaitConfig {
            duration_s: 4.0,
            ..Default::default()
        })
        .unwrap();
        let (contacts, force) = location_forces(
            take.vgrf.as_ref().unwrap(),
            &take.layout_or_default(),
            &ContactParams::default(),
        )
        .unwrap();
        let m = take.local_motion.as_ref().unwrap();
        let out = cleanup_with_contacts(m, &take.skeleton, &contacts, Some(force.view()), &IkWeights::default())
            .unwrap();
        let truth = take.contacts.as_ref().unwrap();
        assert!(footskate(&take.poses, truth, &take.skeleton).unwrap() < 1e-3);
        assert!(out.report.mean_deviation_m < 5e-3, "{:?}", out.report);
    }

    #[test]
    fn zero_forces_give_no_constraints() {
        let take = generate_gait(&GaitConfig {
            duration_s: 3.0,
            ..Default::default()
        })
        .unwrap();
        let vgrf = VgrfSequence::zeros(take.frames(), 100.0);
        let (contacts, force) = location_forces(&vgrf, &take.layout_or_default(), &ContactParams::default()).unwrap();
        let m = take.local_motion.as_ref().unwrap();
        let out = cleanup_with_contacts(m, &take.skeleton, &contacts, Some(force.view()), &IkWeights::default())
            .unwrap();
        assert_eq!(out.report.constraints, 0);
        assert!(out.report.mean_deviation_m < 1e-4);
        assert!(IkWeights {
            w_constraint: 0.0,
            w_pose: 0.0,
            w_smooth: 0.0,
            ..Default::default()
        }
        .check()
        .len()
            == 1);
    }
}
