//! Alignment of insole data with motion capture.
//!
//! Both sides are reduced to a vertical acceleration trace: the insole IMU as
//! specific-force magnitude minus gravity, the motion as the second derivative
//! of the mean foot-joint height. The offset maximizing their normalized
//! cross-correlation is applied to the insole series.

use ndarray::{s, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grf::{gaussian_kernel, smooth, total_vgrf};
use crate::kinematics::{finite_difference, forward_kinematics, resample_motion, resample_poses, resample_positions, DiffOrder};
use crate::types::*;

/// Gaussian filter width applied to both traces before correlation, seconds.
pub const ACCEL_SIGMA_S: f64 = 0.02;
/// Peak correlation below this marks an estimate as unreliable.
pub const LOW_CONFIDENCE: f64 = 0.5;
/// Half-width of the window placed around each jump spike, seconds.
pub const JUMP_HALF_WINDOW_S: f64 = 0.5;
const SPIKE_MADS: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffsetEstimate {
    /// Samples by which the motion trace lags the insole trace.
    pub lag: i64,
    pub correlation: f64,
    pub low_confidence: bool,
}

/// Time interval in seconds.
pub type Window = (f64, f64);

/// Second derivative of the mean foot-joint height, m/s².
pub fn mocap_vertical_accel(poses: &PoseSequence, skeleton: &Skeleton) -> Result<Vec<f64>> {
    let feet = skeleton.foot_joints.all();
    let t = poses.frames();
    let mut height = Array2::zeros((t, 1));
    for f in 0..t {
        height[[f, 0]] = feet.iter().map(|&j| poses.positions[[f, j, 1]] as f64).sum::<f64>() / feet.len() as f64;
    }
    let acc = finite_difference(height.view(), DiffOrder::Second, poses.rate_hz)?;
    Ok(acc.column(0).to_vec())
}

/// Mean over both insoles of specific-force magnitude minus gravity, m/s².
pub fn insole_vertical_accel(imu: &ImuSequence) -> Vec<f64> {
    (0..imu.accel.shape()[0])
        .map(|f| {
            (0..2)
                .map(|foot| {
                    let a = imu.accel.slice(s![f, foot, ..]);
                    a.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt() - GRAVITY
                })
                .sum::<f64>()
                / 2.0
        })
        .collect()
}

pub fn lowpass(signal: &[f64], rate_hz: f64) -> Vec<f64> {
    smooth(signal, &gaussian_kernel(ACCEL_SIGMA_S * rate_hz))
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

fn variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n
}

/// Lag `k` maximizing the correlation of `insole[t - k]` with `mocap[t]`.
///
/// Ties go to the smallest `|k|`, positive before negative.
pub fn estimate_offset(insole: &[f64], mocap: &[f64], rate_hz: f64, max_lag_s: f64) -> Result<OffsetEstimate> {
    let max_lag = (max_lag_s * rate_hz).round() as i64;
    let n = insole.len().min(mocap.len()) as i64;
    if max_lag < 0 || max_lag >= n {
        return Err(Error::InvalidArgument(format!(
            "max lag of {max_lag} samples must be below the shorter series length {n}"
        )));
    }
    for (name, x) in [("insole", insole), ("mocap", mocap)] {
        if !(variance(x) > 1e-18) {
            return Err(Error::Degenerate(format!("{name} acceleration has zero variance")));
        }
    }
    let mut best = OffsetEstimate {
        lag: 0,
        correlation: f64::NEG_INFINITY,
        low_confidence: true,
    };
    let mut lags = vec![0i64];
    for k in 1..=max_lag {
        lags.push(k);
        lags.push(-k);
    }
    for k in lags {
        let start = k.max(0);
        let end = (mocap.len() as i64).min(insole.len() as i64 + k);
        if end - start < 2 {
            continue;
        }
        let y = &mocap[start as usize..end as usize];
        let x = &insole[(start - k) as usize..(end - k) as usize];
        let r = pearson(x, y);
        if r > best.correlation {
            best.lag = k;
            best.correlation = r;
        }
    }
    best.low_confidence = best.correlation < LOW_CONFIDENCE;
    Ok(best)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Windows around the first and last spike above median + 6·MAD.
pub fn detect_jump_windows(series: &[f64], rate_hz: f64) -> Result<[Window; 2]> {
    let duration = series.len() as f64 / rate_hz;
    if duration < 2.0 {
        return Err(Error::InvalidArgument(format!(
            "jump detection needs at least 2 s of data, got {duration:.2} s"
        )));
    }
    let mut tmp = series.to_vec();
    let med = median(&mut tmp);
    let mut dev: Vec<f64> = series.iter().map(|v| (v - med).abs()).collect();
    let mad = median(&mut dev);
    let threshold = med + SPIKE_MADS * mad;

    let mut peaks = Vec::new();
    let mut run: Option<usize> = None;
    for i in 0..=series.len() {
        let above = i < series.len() && series[i] > threshold;
        match (run, above) {
            (None, true) => run = Some(i),
            (Some(a), false) => {
                let peak = (a..i).max_by(|&p, &q| series[p].total_cmp(&series[q]).then(q.cmp(&p))).unwrap_or(a);
                peaks.push(peak);
                run = None;
            }
            _ => {}
        }
    }
    if peaks.len() < 2 {
        return Err(Error::TooFewSpikes(peaks.len()));
    }
    let window = |p: usize| {
        let t = p as f64 / rate_hz;
        ((t - JUMP_HALF_WINDOW_S).max(0.0), (t + JUMP_HALF_WINDOW_S).min(duration))
    };
    Ok([window(peaks[0]), window(peaks[peaks.len() - 1])])
}

/// Series used to locate the jump pattern: total vGRF of both feet when
/// available, otherwise the insole acceleration trace.
pub fn jump_series(take: &Take) -> Result<(Vec<f64>, f64)> {
    if let Some(v) = &take.vgrf {
        let total = total_vgrf(v);
        return Ok((total.rows().into_iter().map(|r| r.sum()).collect(), v.rate_hz));
    }
    if let Some(imu) = &take.imu {
        return Ok((insole_vertical_accel(imu), imu.rate_hz));
    }
    Err(Error::InvalidArgument("take has neither vgrf nor imu data".into()))
}

/// Insole sampling rate of a take, if it carries any insole series.
pub fn insole_rate(take: &Take) -> Option<f64> {
    take.vgrf
        .as_ref()
        .map(|v| v.rate_hz)
        .or(take.pressure.as_ref().map(|p| p.rate_hz))
        .or(take.imu.as_ref().map(|i| i.rate_hz))
        .or(take.contacts.as_ref().map(|c| c.rate_hz))
}

/// Filtered acceleration traces of both sides at the insole rate.
pub fn acceleration_traces(take: &Take) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let imu = take
        .imu
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("take has no insole accelerometer data".into()))?;
    let rate = imu.rate_hz;
    let insole = lowpass(&insole_vertical_accel(imu), rate);
    let mocap_rate = take.poses.rate_hz;
    let mocap = lowpass(&mocap_vertical_accel(&take.poses, &take.skeleton)?, mocap_rate);
    let mocap = if (mocap_rate - rate).abs() > 1e-9 {
        let col = Array2::from_shape_vec((mocap.len(), 1), mocap.iter().map(|v| *v as f32).collect())
            .map_err(|e| Error::Shape(e.to_string()))?;
        resample_positions(col.view(), mocap_rate, rate)?
            .column(0)
            .iter()
            .map(|v| *v as f64)
            .collect()
    } else {
        mocap
    };
    Ok((insole, mocap, rate))
}

fn crop3<T: Clone>(a: &Array3<T>, start: usize, end: usize) -> Array3<T> {
    a.slice(s![start..end, .., ..]).to_owned()
}

/// Advances every insole series by `k` samples (`k < 0` delays, repeating
/// the first frame), so that `estimate_offset` on the result recovers `k`.
pub fn inject_offset(take: &Take, k: i64) -> Take {
    fn shift<T: Clone + Default>(a: &Array3<T>, k: i64) -> Array3<T> {
        let n = a.shape()[0];
        if k >= 0 {
            crop3(a, (k as usize).min(n), n)
        } else {
            let pad = (-k) as usize;
            let mut out = Array3::<T>::default((n + pad, a.shape()[1], a.shape()[2]));
            for i in 0..n + pad {
                let src = i.saturating_sub(pad);
                out.slice_mut(s![i, .., ..]).assign(&a.slice(s![src, .., ..]));
            }
            out
        }
    }
    let mut out = take.clone();
    if let Some(v) = out.vgrf.as_mut() {
        v.values = shift(&v.values, k);
    }
    if let Some(p) = out.pressure.as_mut() {
        p.values = shift(&p.values, k);
    }
    if let Some(c) = out.contacts.as_mut() {
        c.labels = shift(&c.labels, k);
    }
    if let Some(i) = out.imu.as_mut() {
        i.accel = shift(&i.accel, k);
    }
    out.synchronized = false;
    out
}

/// Applies `offset` to the insole series, resamples motion to the insole
/// rate, crops to the common overlap and trims the jump pattern.
///
/// `windows` are in insole time; everything before the end of the first and
/// after the start of the second is removed.
pub fn align_and_trim(take: &Take, offset: i64, windows: Option<[Window; 2]>) -> Result<Take> {
    let rate = insole_rate(take).unwrap_or(take.poses.rate_hz);
    let mut out = take.clone();
    if (take.poses.rate_hz - rate).abs() > 1e-9 {
        if out.original_poses.is_none() {
            out.original_poses = Some(take.poses.clone());
        }
        match &take.local_motion {
            Some(m) => {
                let m = resample_motion(m, rate)?;
                out.poses = forward_kinematics(&take.skeleton, &m)?;
                out.local_motion = Some(m);
            }
            None => out.poses = resample_poses(&take.poses, rate)?,
        }
    }
    let motion_len = out.poses.frames() as i64;
    let insole_len = [
        take.vgrf.as_ref().map(|v| v.frames()),
        take.pressure.as_ref().map(|p| p.values.shape()[0]),
        take.contacts.as_ref().map(|c| c.frames()),
        take.imu.as_ref().map(|i| i.accel.shape()[0]),
    ]
    .into_iter()
    .flatten()
    .min()
    .map_or(motion_len - offset, |n| n as i64);

    // Motion frame t pairs with insole sample t - offset.
    let mut start = offset.max(0);
    let mut end = motion_len.min(insole_len + offset);
    if let Some([w1, w2]) = windows {
        start = start.max((w1.1 * rate - 1e-9).ceil() as i64 + offset);
        end = end.min((w2.0 * rate + 1e-9).floor() as i64 + offset);
    }
    if end <= start {
        return Err(Error::InvalidArgument(format!(
            "empty overlap after applying offset {offset} and trimming"
        )));
    }
    let (s0, s1) = (start as usize, end as usize);
    let (i0, i1) = ((start - offset) as usize, (end - offset) as usize);
    out.poses = out.poses.window(s0, s1 - s0);
    out.local_motion = out.local_motion.map(|m| m.window(s0, s1 - s0));
    if let Some(v) = out.vgrf.as_mut() {
        v.values = crop3(&v.values, i0, i1);
    }
    if let Some(p) = out.pressure.as_mut() {
        p.values = crop3(&p.values, i0, i1);
    }
    if let Some(c) = out.contacts.as_mut() {
        c.labels = crop3(&c.labels, i0, i1);
    }
    if let Some(i) = out.imu.as_mut() {
        i.accel = crop3(&i.accel, i0, i1);
    }
    out.synchronized = true;
    Ok(out)
}

/// Full synchronization: offset estimate, jump detection, alignment.
pub fn synchronize(take: &Take, max_lag_s: f64) -> Result<(Take, OffsetEstimate, [Window; 2])> {
    let (series, rate) = jump_series(take)?;
    let windows = detect_jump_windows(&series, rate)?;
    let (insole, mocap, rate) = acceleration_traces(take)?;
    let est = estimate_offset(&insole, &mocap, rate, max_lag_s)?;
    if est.low_confidence {
        log::warn!("offset estimate has low confidence (peak correlation {:.3})", est.correlation);
    }
    Ok((align_and_trim(take, est.lag, Some(windows))?, est, windows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::synth::{generate_gait, jump_times, GaitConfig};
    use rand_distr::{Distribution, StandardNormal};

    fn shifted(a: &[f64], k: i64) -> Vec<f64> {
        (0..a.len() as i64)
            .map(|t| {
                let i = (t - k).clamp(0, a.len() as i64 - 1);
                a[i as usize]
            })
            .collect()
    }

    fn spiky(n: usize, seed: u64) -> Vec<f64> {
        let mut r = rng::seeded(seed);
        let mut x: Vec<f64> = (0..n).map(|_| 0.1 * Distribution::<f64>::sample(&StandardNormal, &mut r)).collect();
        x[n / 2] += 10.0;
        x[n / 3] += 6.0;
        lowpass(&x, 100.0)
    }

    #[test]
    fn identical_series_give_zero() {
        let a = spiky(600, 1);
        assert_eq!(estimate_offset(&a, &a, 100.0, 1.0).unwrap().lag, 0);
    }

    #[test]
    fn recovers_constructed_shift() {
        let a = spiky(800, 2);
        let b = shifted(&a, 37);
        let est = estimate_offset(&a, &b, 100.0, 1.0).unwrap();
        assert_eq!(est.lag, 37);
        assert!(!est.low_confidence);
    }

    #[test]
    fn white_noise_is_low_confidence() {
        let mut r = rng::seeded(3);
        let a: Vec<f64> = (0..1000).map(|_| Distribution::<f64>::sample(&StandardNormal, &mut r)).collect();
        let b: Vec<f64> = (0..1000).map(|_| Distribution::<f64>::sample(&StandardNormal, &mut r)).collect();
        assert!(estimate_offset(&a, &b, 100.0, 1.0).unwrap().low_confidence);
    }

    #[test]
    fn constant_series_is_degenerate() {
        let a = vec![1.0; 300];
        let b = spiky(300, 4);
        assert!(matches!(estimate_offset(&a, &b, 100.0, 0.5), Err(Error::Degenerate(_))));
        assert!(matches!(estimate_offset(&b, &b, 100.0, 5.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn stationary_pose_has_zero_accel() {
        let take = generate_gait(&GaitConfig { duration_s: 3.0, ..Default::default() }).unwrap();
        let mut poses = take.poses.window(0, 50);
        for f in 1..50 {
            let first = poses.positions.slice(s![0, .., ..]).to_owned();
            poses.positions.slice_mut(s![f, .., ..]).assign(&first);
        }
        let acc = mocap_vertical_accel(&poses, &take.skeleton).unwrap();
        assert!(acc.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn quadratic_height_gives_constant_accel() {
        let take = generate_gait(&GaitConfig { duration_s: 3.0, ..Default::default() }).unwrap();
        let mut poses = take.poses.window(0, 60);
        let a = 3.0;
        for f in 0..60 {
            let t = f as f64 / 100.0;
            for j in 0..23 {
                poses.positions[[f, j, 1]] = (0.5 * a * t * t) as f32 + 0.5;
            }
        }
        let acc = mocap_vertical_accel(&poses, &take.skeleton).unwrap();
        for v in &acc[1..59] {
            assert!((v - a).abs() < 1e-2, "{v}");
        }
    }

    #[test]
    fn windows_follow_spike_times() {
        let mut x = vec![1.0; 6000];
        x[100] = 5.0;
        x[5900] = 5.0;
        let [w1, w2] = detect_jump_windows(&x, 100.0).unwrap();
        assert!((w1.0 - 0.5).abs() < 1e-9 && (w1.1 - 1.5).abs() < 1e-9);
        assert!((w2.0 - 58.5).abs() < 1e-9 && (w2.1 - 59.5).abs() < 1e-9);
    }

    #[test]
    fn flat_series_has_too_few_spikes() {
        let err = detect_jump_windows(&vec![1.0; 500], 100.0).unwrap_err();
        assert!(err.to_string().contains("fewer than two spikes"));
    }

    fn jump_take() -> (Take, GaitConfig) {
        let cfg = GaitConfig {
            duration_s: 18.0,
            mocap_rate_hz: Some(240.0),
            jump_markers: true,
            seed: 5,
            ..Default::default()
        };
        (generate_gait(&cfg).unwrap(), cfg)
    }

    #[test]
    fn planted_jumps_are_detected() {
        let (take, cfg) = jump_take();
        let (series, rate) = jump_series(&take).unwrap();
        let [w1, w2] = detect_jump_windows(&series, rate).unwrap();
        let jumps = jump_times(&cfg);
        let inside = |w: Window, t: f64| w.0 <= t && t <= w.1;
        assert!(inside(w1, jumps[0].0) || inside(w1, jumps[0].1), "{w1:?} {jumps:?}");
        assert!(inside(w2, jumps[1].0) || inside(w2, jumps[1].1), "{w2:?} {jumps:?}");
    }

    #[test]
    fn ballistic_apex_accel() {
        let (take, cfg) = jump_take();
        let acc = mocap_vertical_accel(&take.poses, &take.skeleton).unwrap();
        let (to, land) = jump_times(&cfg)[0];
        let mid = ((to + land) / 2.0 * 240.0).round() as usize;
        assert!((acc[mid] + GRAVITY).abs() < 0.05, "{}", acc[mid]);
    }

    #[test]
    fn injected_offset_is_recovered_and_removed() {
        let (take, _) = jump_take();
        for k in [-150, -37, 0, 64, 200] {
            let shifted = inject_offset(&take, k);
            let (aligned, est, _) = synchronize(&shifted, 2.5).unwrap();
            assert!((est.lag - k).abs() <= 1, "k {k} est {}", est.lag);
            assert!(aligned.synchronized);
            assert!(crate::container::validate_take(&aligned).is_valid());
            // Residual lag on the aligned but untrimmed series.
            let untrimmed = align_and_trim(&shifted, est.lag, None).unwrap();
            let (insole, mocap, rate) = acceleration_traces(&untrimmed).unwrap();
            assert_eq!(estimate_offset(&insole, &mocap, rate, 1.0).unwrap().lag, 0);
        }
    }

    #[test]
    fn alignment_is_idempotent() {
        let (take, _) = jump_take();
        let (aligned, _, _) = synchronize(&take, 1.0).unwrap();
        let again = align_and_trim(&aligned, 0, None).unwrap();
        assert_eq!(aligned, again);
    }

    #[test]
    fn zero_offset_crops_to_overlap() {
        let (take, _) = jump_take();
        let out = align_and_trim(&take, 0, None).unwrap();
        assert_eq!(out.frames(), take.vgrf.as_ref().unwrap().frames());
        assert_eq!(out.poses.rate_hz, 100.0);
    }

    #[test]
    fn covering_windows_leave_nothing() {
        let (take, cfg) = jump_take();
        let all = [(0.0, cfg.duration_s), (0.0, cfg.duration_s)];
        assert!(align_and_trim(&take, 0, Some(all)).is_err());
    }
}
