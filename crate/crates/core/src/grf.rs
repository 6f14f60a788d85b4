//! Pressure to vGRF conversion, the contact function and center of pressure.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::*;

/// Parameters of the contact function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactParams {
    /// Standard deviation of the temporal Gaussian filter, seconds. Zero disables smoothing.
    pub smooth_sigma_s: f64,
    /// Per-location threshold on the rescaled group force, body-weight fraction.
    pub raw_threshold_bw: f64,
    /// Frames whose smoothed per-foot total is below this are forced off.
    pub gate_threshold_bw: f64,
    /// Contact runs shorter than this are deleted, seconds.
    pub min_phase_s: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        ContactParams {
            smooth_sigma_s: 0.05,
            raw_threshold_bw: 0.05,
            gate_threshold_bw: 0.10,
            min_phase_s: 0.1,
        }
    }
}

impl ContactParams {
    pub fn check(&self) -> Vec<String> {
        let mut issues = Vec::new();
        if !(self.smooth_sigma_s >= 0.0) {
            issues.push(format!("contact params: sigma {} must be >= 0", self.smooth_sigma_s));
        }
        if !(self.raw_threshold_bw > 0.0) {
            issues.push(format!("contact params: raw threshold {} must be > 0", self.raw_threshold_bw));
        }
        if !(self.gate_threshold_bw > 0.0) {
            issues.push(format!("contact params: gate threshold {} must be > 0", self.gate_threshold_bw));
        }
        if !(self.min_phase_s >= 0.0) {
            issues.push(format!("contact params: min phase {} must be >= 0", self.min_phase_s));
        }
        issues
    }

    /// Minimum contact run length in frames at `rate_hz`.
    pub fn min_phase_frames(&self, rate_hz: f64) -> usize {
        (self.min_phase_s * rate_hz - 1e-9).ceil().max(0.0) as usize
    }
}

/// Denominator floor of the heel/toe rescaling, body-weight fraction.
pub const RESCALE_EPS: f64 = 1e-8;

pub fn pressure_to_vgrf(
    pressure: &PressureSequence,
    layout: &InsoleLayout,
    meta: &SubjectMeta,
) -> Result<VgrfSequence> {
    if !(meta.weight_kg > 0.0) {
        return Err(Error::InvalidArgument(format!("weight {} kg", meta.weight_kg)));
    }
    let issues = layout.check();
    if !issues.is_empty() {
        return Err(Error::Validation(issues));
    }
    if pressure.values.shape()[1..] != [2, CELLS] {
        return Err(Error::Shape(format!(
            "pressure shape {:?} is not T×2×{CELLS}",
            pressure.values.shape()
        )));
    }
    let bw = meta.body_weight_newtons();
    let mut values = Array3::zeros(pressure.values.dim());
    for ((t, f, c), &p) in pressure.values.indexed_iter() {
        if p < 0.0 || !p.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "pressure {p} at frame {t}, foot {f}, cell {c}"
            )));
        }
        // N/cm² · cm² = N
        values[[t, f, c]] = (p as f64 * layout.feet[f][c].area_cm2 / bw) as f32;
    }
    Ok(VgrfSequence {
        values,
        rate_hz: pressure.rate_hz,
    })
}

/// Per-frame, per-foot sum over the 16 cells (`T×2`).
pub fn total_vgrf(vgrf: &VgrfSequence) -> Array2<f64> {
    let t = vgrf.frames();
    let mut out = Array2::zeros((t, 2));
    for f in 0..t {
        for foot in 0..2 {
            out[[f, foot]] = (0..CELLS).map(|c| vgrf.values[[f, foot, c]] as f64).sum();
        }
    }
    out
}

/// Normalized Gaussian kernel truncated at 4σ; `[1.0]` when σ is zero.
pub fn gaussian_kernel(sigma_frames: f64) -> Vec<f64> {
    if sigma_frames <= 0.0 {
        return vec![1.0];
    }
    let radius = (4.0 * sigma_frames).ceil() as isize;
    let mut w: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma_frames * sigma_frames)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Index into a length-`n` signal with half-sample symmetric reflection.
fn reflect(k: isize, n: usize) -> usize {
    let n = n as isize;
    let m = k.rem_euclid(2 * n);
    (if m < n { m } else { 2 * n - 1 - m }) as usize
}

/// Convolves `signal` with a centered `kernel` using reflective padding.
pub fn smooth(signal: &[f64], kernel: &[f64]) -> Vec<f64> {
    let n = signal.len();
    if n == 0 || kernel.len() == 1 {
        return signal.to_vec();
    }
    let r = (kernel.len() / 2) as isize;
    (0..n as isize)
        .map(|t| {
            kernel
                .iter()
                .enumerate()
                .map(|(i, w)| w * signal[reflect(t + i as isize - r, n)])
                .sum()
        })
        .collect()
}

/// Deletes maximal runs of ones shorter than `min_len`.
pub fn remove_short_runs(labels: &mut [u8], min_len: usize) {
    let mut t = 0;
    while t < labels.len() {
        if labels[t] == 0 {
            t += 1;
            continue;
        }
        let start = t;
        while t < labels.len() && labels[t] != 0 {
            t += 1;
        }
        if t - start < min_len {
            labels[start..t].iter_mut().for_each(|v| *v = 0);
        }
    }
}

/// Contact labels plus the intermediate per-location forces they were derived from.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactAnalysis {
    pub contacts: ContactSequence,
    /// Rescaled smoothed group forces `T×2×2` indexed `[frame, foot, location]`.
    pub location_force: Array3<f64>,
    /// Smoothed per-foot total `T×2`.
    pub total: Array2<f64>,
}

/// The contact function: vGRF components to heel/toe labels.
pub fn contact_labels(
    vgrf: &VgrfSequence,
    layout: &InsoleLayout,
    params: &ContactParams,
) -> Result<ContactSequence> {
    contact_analysis(vgrf, layout, params).map(|a| a.contacts)
}

pub fn contact_analysis(
    vgrf: &VgrfSequence,
    layout: &InsoleLayout,
    params: &ContactParams,
) -> Result<ContactAnalysis> {
    let rate = vgrf.rate_hz;
    if !(rate > 0.0) {
        return Err(Error::InvalidArgument(format!("rate {rate} Hz must be positive")));
    }
    let issues: Vec<String> = layout.check().into_iter().chain(params.check()).collect();
    if !issues.is_empty() {
        return Err(Error::Validation(issues));
    }
    let t = vgrf.frames();
    let kernel = gaussian_kernel(params.smooth_sigma_s * rate);
    let min_len = params.min_phase_frames(rate);

    let mut labels = Array3::<u8>::zeros((t, 2, 2));
    let mut location_force = Array3::zeros((t, 2, 2));
    let mut total = Array2::zeros((t, 2));
    for foot in 0..2 {
        let smoothed: Vec<Vec<f64>> = (0..CELLS)
            .map(|c| {
                let s: Vec<f64> = (0..t).map(|f| vgrf.values[[f, foot, c]] as f64).collect();
                smooth(&s, &kernel)
            })
            .collect();
        let group_sum = |group: CellGroup, f: usize| -> f64 {
            layout.cells_in(foot, group).map(|c| smoothed[c][f]).sum()
        };
        let mut raw = [vec![0u8; t], vec![0u8; t]];
        for f in 0..t {
            let heel = group_sum(CellGroup::Heel, f);
            let toe = group_sum(CellGroup::Toe, f);
            let all: f64 = (0..CELLS).map(|c| smoothed[c][f]).sum();
            let denom = heel + toe;
            let (heel, toe) = if denom > RESCALE_EPS {
                let r = all / denom;
                (heel * r, toe * r)
            } else {
                (0.0, 0.0)
            };
            total[[f, foot]] = all;
            location_force[[f, foot, HEEL]] = heel;
            location_force[[f, foot, TOE]] = toe;
            let gated = all < params.gate_threshold_bw;
            raw[HEEL][f] = u8::from(!gated && heel >= params.raw_threshold_bw);
            raw[TOE][f] = u8::from(!gated && toe >= params.raw_threshold_bw);
        }
        for (loc, mut lab) in raw.into_iter().enumerate() {
            remove_short_runs(&mut lab, min_len);
            for (f, v) in lab.into_iter().enumerate() {
                labels[[f, foot, loc]] = v;
            }
        }
    }
    Ok(ContactAnalysis {
        contacts: ContactSequence {
            labels,
            rate_hz: rate,
        },
        location_force,
        total,
    })
}

/// Center of pressure per frame and foot in the foot frame, `None` where the
/// foot's total force is below `gate_bw`.
pub fn center_of_pressure(
    vgrf: &VgrfSequence,
    layout: &InsoleLayout,
    gate_bw: f64,
) -> Vec<[Option<[f64; 2]>; 2]> {
    (0..vgrf.frames())
        .map(|f| {
            let mut out = [None, None];
            for (foot, slot) in out.iter_mut().enumerate() {
                let mut sum = 0.0;
                let mut acc = [0.0; 2];
                for c in 0..CELLS {
                    let w = vgrf.values[[f, foot, c]] as f64;
                    let p = layout.feet[foot][c].position;
                    sum += w;
                    acc[0] += w * p[0];
                    acc[1] += w * p[1];
                }
                if sum >= gate_bw && sum > 0.0 {
                    *slot = Some([acc[0] / sum, acc[1] / sum]);
                }
            }
            out
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn layout() -> InsoleLayout {
        InsoleLayout::approximate()
    }

    /// Spreads `force` evenly over the cells of `group` on `foot` for frames in `range`.
    fn put(v: &mut VgrfSequence, foot: usize, group: CellGroup, range: std::ops::Range<usize>, force: f64) {
        let l = layout();
        let cells: Vec<usize> = l.cells_in(foot, group).collect();
        for f in range {
            for &c in &cells {
                v.values[[f, foot, c]] += (force / cells.len() as f64) as f32;
            }
        }
    }

    #[test]
    fn zero_pressure_gives_zero_force() {
        let p = PressureSequence { values: Array3::zeros((5, 2, CELLS)), rate_hz: 100.0 };
        let meta = SubjectMeta { id: "s".into(), weight_kg: 70.0, height_m: 1.7 };
        let v = pressure_to_vgrf(&p, &layout(), &meta).unwrap();
        assert!(v.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_cell_conversion() {
        let mut p = PressureSequence { values: Array3::zeros((1, 2, CELLS)), rate_hz: 100.0 };
        p.values[[0, 1, 9]] = 12.5;
        let meta = SubjectMeta { id: "s".into(), weight_kg: 80.0, height_m: 1.8 };
        let l = layout();
        let v = pressure_to_vgrf(&p, &l, &meta).unwrap();
        let expected = 12.5 * l.feet[1][9].area_cm2 / (80.0 * 9.81);
        assert!((v.values[[0, 1, 9]] as f64 - expected).abs() < 1e-7);
    }

    #[test]
    fn standing_subject_carries_one_body_weight() {
        let l = layout();
        let meta = SubjectMeta { id: "s".into(), weight_kg: 80.0, height_m: 1.8 };
        let total_area: f64 = l.feet.iter().flatten().map(|c| c.area_cm2).sum();
        // uniform pressure whose force sums to 784.8 N
        let p_val = 784.8 / total_area;
        let p = PressureSequence { values: Array3::from_elem((3, 2, CELLS), p_val as f32), rate_hz: 100.0 };
        let v = pressure_to_vgrf(&p, &l, &meta).unwrap();
        let tot = total_vgrf(&v);
        assert!((tot[[1, 0]] + tot[[1, 1]] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn negative_pressure_is_rejected() {
        let mut p = PressureSequence { values: Array3::zeros((2, 2, CELLS)), rate_hz: 100.0 };
        p.values[[1, 0, 3]] = -0.25;
        let meta = SubjectMeta { id: "s".into(), weight_kg: 70.0, height_m: 1.7 };
        assert!(pressure_to_vgrf(&p, &layout(), &meta).is_err());
    }

    #[test]
    fn totals_match_naive_loop() {
        let mut v = VgrfSequence::zeros(4, 100.0);
        v.values.iter_mut().enumerate().for_each(|(i, x)| *x = ((i * 37 % 101) as f32) / 300.0);
        let tot = total_vgrf(&v);
        for f in 0..4 {
            for foot in 0..2 {
                let mut s = 0.0f64;
                for c in 0..CELLS {
                    s += v.values[[f, foot, c]] as f64;
                }
                assert_eq!(tot[[f, foot]], s);
            }
        }
        let u = VgrfSequence { values: Array3::from_elem((2, 2, CELLS), 0.05), rate_hz: 100.0 };
        assert!((total_vgrf(&u)[[0, 0]] - 0.8).abs() < 1e-6);
    }

    #[test]
    fn sustained_heel_contact() {
        let mut v = VgrfSequence::zeros(200, 100.0);
        put(&mut v, LEFT, CellGroup::Heel, 0..200, 0.30);
        let c = contact_labels(&v, &layout(), &ContactParams::default()).unwrap();
        for f in 0..200 {
            assert_eq!(c.labels[[f, LEFT, HEEL]], 1);
            assert_eq!(c.labels[[f, LEFT, TOE]], 0);
            assert_eq!(c.labels[[f, RIGHT, HEEL]], 0);
        }
    }

    #[test]
    fn short_pulse_is_deleted() {
        // Smoothing off so the thresholded run has exactly the pulse length.
        let params = ContactParams {
            smooth_sigma_s: 0.0,
            ..ContactParams::default()
        };
        let mut v = VgrfSequence::zeros(100, 100.0);
        put(&mut v, LEFT, CellGroup::Heel, 40..48, 0.30);
        let c = contact_labels(&v, &layout(), &params).unwrap();
        assert!(c.labels.iter().all(|&x| x == 0));

        let mut v = VgrfSequence::zeros(100, 100.0);
        put(&mut v, LEFT, CellGroup::Heel, 40..50, 0.30);
        let c = contact_labels(&v, &layout(), &params).unwrap();
        assert_eq!(c.labels.iter().map(|&x| x as usize).sum::<usize>(), 10);
    }

    #[test]
    fn gray_cells_are_redistributed() {
        // s_all = 0.30, heel 0.12, toe 0.03, gray 0.15 -> rescaled heel 0.24
        let mut v = VgrfSequence::zeros(100, 100.0);
        put(&mut v, LEFT, CellGroup::Heel, 0..100, 0.12);
        put(&mut v, LEFT, CellGroup::Toe, 0..100, 0.03);
        put(&mut v, LEFT, CellGroup::Gray, 0..100, 0.15);
        let a = contact_analysis(&v, &layout(), &ContactParams::default()).unwrap();
        assert!((a.location_force[[50, LEFT, HEEL]] - 0.24).abs() < 1e-6);
        assert!((a.location_force[[50, LEFT, TOE]] - 0.06).abs() < 1e-6);
        assert_eq!(a.contacts.labels[[50, LEFT, HEEL]], 1);
        assert_eq!(a.contacts.labels[[50, LEFT, TOE]], 1);
    }

    #[test]
    fn all_zero_gives_no_contact() {
        let v = VgrfSequence::zeros(50, 100.0);
        let c = contact_labels(&v, &layout(), &ContactParams::default()).unwrap();
        assert!(c.labels.iter().all(|&x| x == 0));
        assert!(contact_labels(&VgrfSequence::zeros(5, 0.0), &layout(), &ContactParams::default()).is_err());
    }

    #[test]
    fn kernel_is_normalized_and_truncated() {
        let k = gaussian_kernel(5.0);
        assert_eq!(k.len(), 41);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(smooth(&[2.0; 7], &k).len(), 7);
        for v in smooth(&[2.0; 7], &k) {
            assert!((v - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cop_examples() {
        let l = layout();
        let mut v = VgrfSequence::zeros(3, 100.0);
        v.values[[0, LEFT, 5]] = 0.4;
        v.values[[1, RIGHT, 2]] = 0.2;
        v.values[[1, RIGHT, 9]] = 0.2;
        v.values[[2, LEFT, 0]] = 0.05;
        let cop = center_of_pressure(&v, &l, 0.1);
        assert_eq!(cop[0][LEFT], Some(l.feet[LEFT][5].position));
        let (a, b) = (l.feet[RIGHT][2].position, l.feet[RIGHT][9].position);
        let mid = cop[1][RIGHT].unwrap();
        assert!((mid[0] - (a[0] + b[0]) / 2.0).abs() < 1e-12);
        assert!((mid[1] - (a[1] + b[1]) / 2.0).abs() < 1e-12);
        assert_eq!(cop[2][LEFT], None);
        assert_eq!(cop[0][RIGHT], None);
    }

    fn random_vgrf(seed: u64, frames: usize) -> VgrfSequence {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut v = VgrfSequence::zeros(frames, 100.0);
        // piecewise-constant activity so that contacts of varied length appear
        for foot in 0..2 {
            let mut f = 0;
            while f < frames {
                let len = rng.random_range(3..40);
                let on = rng.random_bool(0.5);
                for ff in f..(f + len).min(frames) {
                    for c in 0..CELLS {
                        v.values[[ff, foot, c]] = if on { rng.random_range(0.0..0.08) } else { rng.random_range(0.0..0.002) };
                    }
                }
                f += len;
            }
        }
        v
    }

    proptest! {
        #[test]
        fn run_filter_is_idempotent(bits in proptest::collection::vec(0u8..2, 0..200), min in 0usize..15) {
            let mut a = bits.clone();
            remove_short_runs(&mut a, min);
            let mut b = a.clone();
            remove_short_runs(&mut b, min);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn scaling_up_only_adds_contacts(seed in 0u64..200, lambda in 1.0f32..3.0) {
            let params = ContactParams { min_phase_s: 0.0, ..ContactParams::default() };
            let v = random_vgrf(seed, 150);
            let mut w = v.clone();
            w.values.mapv_inplace(|x| x * lambda);
            let a = contact_labels(&v, &layout(), &params).unwrap();
            let b = contact_labels(&w, &layout(), &params).unwrap();
            for (x, y) in a.labels.iter().zip(b.labels.iter()) {
                prop_assert!(y >= x);
            }
        }

        #[test]
        fn labels_shift_with_input(seed in 0u64..200, k in 1usize..30) {
            let params = ContactParams::default();
            let v = random_vgrf(seed, 200);
            let mut shifted = VgrfSequence::zeros(200, 100.0);
            for f in k..200 {
                for foot in 0..2 {
                    for c in 0..CELLS {
                        shifted.values[[f, foot, c]] = v.values[[f - k, foot, c]];
                    }
                }
            }
            let a = contact_analysis(&v, &layout(), &params).unwrap();
            let b = contact_analysis(&shifted, &layout(), &params).unwrap();
            // raw thresholded force away from both boundaries must agree
            let margin = 25;
            for f in (k + margin)..(200 - margin) {
                for foot in 0..2 {
                    for l in 0..2 {
                        prop_assert!((a.location_force[[f - k, foot, l]] - b.location_force[[f, foot, l]]).abs() < 1e-9);
                    }
                }
            }
        }

        #[test]
        fn cop_inside_active_hull(seed in 0u64..300) {
            let v = random_vgrf(seed, 20);
            let l = layout();
            for (f, cop) in center_of_pressure(&v, &l, 0.0).iter().enumerate() {
                for foot in 0..2 {
                    if let Some(p) = cop[foot] {
                        let active: Vec<[f64; 2]> = (0..CELLS).filter(|&c| v.values[[f, foot, c]] > 0.0).map(|c| l.feet[foot][c].position).collect();
                        let minx = active.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
                        let maxx = active.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
                        let minz = active.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
                        let maxz = active.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
                        prop_assert!(p[0] >= minx - 1e-9 && p[0] <= maxx + 1e-9);
                        prop_assert!(p[1] >= minz - 1e-9 && p[1] <= maxz + 1e-9);
                    }
                }
            }
        }

        #[test]
        fn conversion_is_linear(a in 0.0f32..20.0, b in 0.0f32..20.0) {
            let l = layout();
            let meta = SubjectMeta { id: "s".into(), weight_kg: 75.0, height_m: 1.8 };
            let mk = |x: f32| PressureSequence { values: Array3::from_shape_fn((2, 2, CELLS), |(t, f, c)| x * (1 + t + f + c) as f32 / 10.0), rate_hz: 100.0 };
            let va = pressure_to_vgrf(&mk(a), &l, &meta).unwrap();
            let vb = pressure_to_vgrf(&mk(b), &l, &meta).unwrap();
            let vab = pressure_to_vgrf(&mk(a + b), &l, &meta).unwrap();
            for ((x, y), z) in va.values.iter().zip(vb.values.iter()).zip(vab.values.iter()) {
                prop_assert!((x + y - z).abs() < 1e-5);
            }
        }
    }
}
