use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use grfnet_core::augment::{AugmentConfig, SkeletonBasis};
use grfnet_core::baselines::{apply_ot_to_take, fit_ot, OtFit, OtSearch, OtThresholds};
use grfnet_core::cleanup::{cleanup_pipeline, cleanup_with_contacts, IkWeights};
use grfnet_core::container::{
    load_take, read_contacts_file, read_vgrf_file, save_take, write_f32_file, write_u8_file, META_FILE,
};
use grfnet_core::eval::{cop_mad, f1, f1_tolerance_curve, footskate, offcontact_fp_profile, vgrf_rmse};
use grfnet_core::grf::{contact_labels, pressure_to_vgrf};
use grfnet_core::nn::{self, load_model, predict, predict_contacts, save_model, Model, ModelConfig, TrainConfig};
use grfnet_core::perturb::{add_noise, blend_pair, mine_blend_pairs};
use grfnet_core::sync::synchronize;
use grfnet_core::synth::{corpus_configs, generate_gait, min_jump_duration};
use grfnet_core::{rng, ContactParams, ContactSequence, InsoleLayout, Take, VgrfSequence};
use rand::seq::{index, SliceRandom};
use serde::Serialize;

use crate::args::*;
use crate::staging::Outputs;
use crate::Invalid;

const SPLIT_KEY: u64 = 0x5e1;
const INIT_KEY: u64 = 0x1a17;
const NOISE_KEY: u64 = 0x7015e;
const BLEND_KEY: u64 = 0xb1e7d;

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

fn check(issues: Vec<String>) -> Result<()> {
    if issues.is_empty() {
        Ok(())
    } else {
        Err(grfnet_core::Error::Validation(issues).into())
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| grfnet_core::Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| grfnet_core::Error::json(path, e).into())
}

fn is_take(path: &Path) -> bool {
    path.join(META_FILE).is_file()
}

/// Take directories named by `paths`, expanding directories of takes in name order.
fn take_dirs(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if is_take(p) {
            out.push(p.clone());
            continue;
        }
        if !p.is_dir() {
            return Err(grfnet_core::Error::MissingFile(p.clone()).into());
        }
        let mut found: Vec<PathBuf> = fs::read_dir(p)
            .map_err(|e| grfnet_core::Error::io(p, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|d| is_take(d))
            .collect();
        if found.is_empty() {
            bail!(Invalid(format!("{} holds no takes", p.display())));
        }
        found.sort();
        out.extend(found);
    }
    Ok(out)
}

fn load_takes(paths: &[PathBuf]) -> Result<Vec<Take>> {
    take_dirs(paths)?
        .iter()
        .map(|d| load_take(d).with_context(|| format!("loading take {}", d.display())))
        .collect()
}

fn contact_params(a: &ContactArgs) -> Result<ContactParams> {
    let p = ContactParams {
        smooth_sigma_s: a.sigma_s,
        raw_threshold_bw: a.raw_bw,
        gate_threshold_bw: a.gate_bw,
        min_phase_s: a.min_phase_s,
    };
    check(p.check())?;
    Ok(p)
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let mut configs = corpus_configs(a.minutes, a.rate, a.seed, a.take_s)?;
    for c in &mut configs {
        c.mocap_rate_hz = a.mocap_rate;
        if a.jump_markers {
            c.jump_markers = true;
            c.duration_s = c.duration_s.max(min_jump_duration(c.cycle_s));
        }
        check(c.check())?;
    }
    let mut outputs = Outputs::default();
    let dir = outputs.stage(&a.out)?;
    fs::create_dir(&dir).map_err(|e| grfnet_core::Error::io(&dir, e))?;
    for (i, c) in configs.iter().enumerate() {
        save_take(&generate_gait(c)?, dir.join(format!("take_{i:03}")))?;
    }
    log::info!("generated {} takes", configs.len());
    outputs.commit()
}

#[derive(Serialize)]
struct SyncReport {
    lag: i64,
    correlation: f64,
    low_confidence: bool,
    jump_windows_s: [(f64, f64); 2],
}

pub fn sync(a: SyncArgs) -> Result<()> {
    let take = load_take(&a.take)?;
    let (synced, est, windows) = synchronize(&take, a.max_lag_s)?;
    log::info!("offset {} samples, correlation {:.3}", est.lag, est.correlation);
    let mut outputs = Outputs::default();
    let dir = outputs.stage(&a.out)?;
    save_take(&synced, &dir)?;
    let report = SyncReport {
        lag: est.lag,
        correlation: est.correlation,
        low_confidence: est.low_confidence,
        jump_windows_s: windows,
    };
    write_json(&report, &dir.join("sync.json"))?;
    outputs.commit()
}

fn measured_vgrf(take: &Take) -> Result<VgrfSequence> {
    match (&take.vgrf, &take.pressure) {
        (Some(v), _) => Ok(v.clone()),
        (None, Some(p)) => Ok(pressure_to_vgrf(p, &take.layout_or_default(), &take.meta)?),
        (None, None) => Err(invalid("take has neither vGRF nor pressure")),
    }
}

pub fn label(a: LabelArgs) -> Result<()> {
    let params = contact_params(&a.contact)?;
    let mut take = load_take(&a.take)?;
    let vgrf = measured_vgrf(&take)?;
    take.contacts = Some(contact_labels(&vgrf, &take.layout_or_default(), &params)?);
    take.contact_params = Some(params);
    let mut outputs = Outputs::default();
    save_take(&take, outputs.stage(&a.out)?)?;
    outputs.commit()
}

pub fn ot_fit(a: OtFitArgs) -> Result<()> {
    let takes = load_takes(&a.data)?;
    let search = OtSearch {
        grid: a.grid,
        levels: a.levels,
        ..OtSearch::default()
    };
    let fit = fit_ot(&takes, &search)?;
    log::info!(
        "height {:.4} m, speed {:.4} m/s, F1 {:.4}",
        fit.thresholds.height_m,
        fit.thresholds.speed_mps,
        fit.f1
    );
    let mut outputs = Outputs::default();
    write_json(&fit, &outputs.stage(&a.out)?)?;
    outputs.commit()
}

/// Thresholds from either an `ot fit` result or a bare thresholds object.
fn read_thresholds(path: &Path) -> Result<OtThresholds> {
    let value: serde_json::Value = read_json(path)?;
    let parsed = if value.get("thresholds").is_some() {
        serde_json::from_value::<OtFit>(value).map(|f| f.thresholds)
    } else {
        serde_json::from_value::<OtThresholds>(value)
    };
    parsed.map_err(|e| grfnet_core::Error::json(path, e).into())
}

pub fn ot_apply(a: OtApplyArgs) -> Result<()> {
    let thr = read_thresholds(&a.thresholds)?;
    let take = load_take(&a.take)?;
    let contacts = apply_ot_to_take(&take.poses, &take.skeleton, &thr)?;
    let mut outputs = Outputs::default();
    write_u8_file(outputs.stage(&a.out)?, contacts.labels.as_slice().expect("standard layout"))?;
    outputs.commit()
}

/// Validation takes drawn by take, never by window.
fn split_takes(takes: Vec<Take>, fraction: f64, seed: u64) -> Result<(Vec<Take>, Vec<Take>)> {
    if !(0.0..1.0).contains(&fraction) {
        bail!(Invalid(format!("--val-split must lie in [0, 1), got {fraction}")));
    }
    let n = takes.len();
    let n_val = if fraction > 0.0 && n >= 2 {
        ((n as f64 * fraction).round() as usize).clamp(1, n - 1)
    } else {
        0
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, &[SPLIT_KEY]));
    let mut val_idx = order[..n_val].to_vec();
    val_idx.sort_unstable();
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (i, t) in takes.into_iter().enumerate() {
        if val_idx.binary_search(&i).is_ok() {
            val.push(t);
        } else {
            train.push(t);
        }
    }
    Ok((train, val))
}

pub fn train(a: TrainArgs) -> Result<()> {
    let takes = load_takes(&a.data)?;
    let skeleton = &takes[0].skeleton;
    let fj = &skeleton.foot_joints;
    let config = ModelConfig {
        width_scale: a.width_scale,
        joints: skeleton.num_joints(),
        foot_joints: [fj.left_ankle, fj.left_toe, fj.right_ankle, fj.right_toe],
        ..ModelConfig::with_variant(a.variant.into())
    };
    config.validate()?;
    if let Some(t) = takes.iter().find(|t| t.skeleton.num_joints() != config.joints) {
        bail!(Invalid(format!(
            "takes mix skeletons with {} and {} joints",
            config.joints,
            t.skeleton.num_joints()
        )));
    }
    let mut cfg = TrainConfig {
        epochs: a.epochs,
        patience: a.patience,
        max_batches_per_epoch: a.max_batches,
        seed: a.seed,
        ..TrainConfig::default()
    };
    if let Some(p) = &a.augment {
        cfg.augment = read_json::<AugmentConfig>(p)?;
    }
    if let Some(w) = a.window {
        cfg.augment.window = w;
    }
    if let Some(lr) = a.lr {
        cfg.optimizer.learning_rate = lr;
    }
    if let Some(b) = a.batch_size {
        cfg.optimizer.batch_size = b;
    }
    check(cfg.optimizer.check())?;
    let basis = a.basis.as_deref().map(SkeletonBasis::load).transpose()?;

    let (train_takes, val_takes) = split_takes(takes, a.val_split, a.seed)?;
    log::info!(
        "{} training takes, {} validation takes, {} parameters",
        train_takes.len(),
        val_takes.len(),
        config.parameter_count()
    );
    let model = Model::new(config, &mut rng::stream(a.seed, &[INIT_KEY]))?;
    let (model, history) = nn::train(model, &train_takes, &val_takes, basis.as_ref(), &cfg)?;

    let mut outputs = Outputs::default();
    save_model(&model, outputs.stage(&a.out)?)?;
    if let Some(h) = &a.history {
        nn::write_history_csv(&history, outputs.stage(h)?)?;
    }
    outputs.commit()
}

pub fn estimate(a: EstimateArgs) -> Result<()> {
    if a.out.is_none() && a.contacts_out.is_none() {
        bail!(Invalid("nothing to write: pass --out and/or --contacts-out".into()));
    }
    let params = contact_params(&a.contact)?;
    let model = load_model(&a.model)?;
    let take = load_take(&a.take)?;
    let mut outputs = Outputs::default();
    if let Some(out) = &a.out {
        let v = predict(&model, &take.poses)?;
        write_f32_file(outputs.stage(out)?, v.values.as_slice().expect("standard layout"))?;
    }
    if let Some(out) = &a.contacts_out {
        let c = predict_contacts(&model, &take.poses, &take.layout_or_default(), &params)?;
        write_u8_file(outputs.stage(out)?, c.labels.as_slice().expect("standard layout"))?;
    }
    outputs.commit()
}

/// An evaluation operand: a take directory or a raw array file.
enum Operand {
    Take(Box<Take>),
    File(PathBuf),
}

impl Operand {
    fn open(path: &Path) -> Result<Self> {
        if path.is_dir() {
            Ok(Operand::Take(Box::new(load_take(path)?)))
        } else {
            Ok(Operand::File(path.to_path_buf()))
        }
    }

    fn take(&self) -> Option<&Take> {
        match self {
            Operand::Take(t) => Some(t),
            Operand::File(_) => None,
        }
    }

    fn contacts(&self, rate: f64) -> Result<ContactSequence> {
        match self {
            Operand::Take(t) => t.contacts.clone().ok_or_else(|| invalid("take has no contact labels")),
            Operand::File(p) => Ok(read_contacts_file(p, rate)?),
        }
    }

    fn vgrf(&self, rate: f64) -> Result<VgrfSequence> {
        match self {
            Operand::Take(t) => t.vgrf.clone().ok_or_else(|| invalid("take has no vGRF")),
            Operand::File(p) => Ok(read_vgrf_file(p, rate)?),
        }
    }
}

struct EvalInputs {
    pred: Operand,
    truth: Operand,
    rate: f64,
}

fn eval_inputs(a: &EvalArgs) -> Result<EvalInputs> {
    let pred = Operand::open(&a.pred)?;
    let truth = Operand::open(&a.truth)?;
    let rate = truth.take().or(pred.take()).map_or(a.rate, Take::rate_hz);
    Ok(EvalInputs { pred, truth, rate })
}

/// Long-format CSV: one `metric,index,value` row per number.
#[derive(Default)]
struct Report {
    text: String,
}

impl Report {
    fn row(&mut self, metric: &str, index: Option<usize>, value: f64) {
        if self.text.is_empty() {
            self.text.push_str("metric,index,value\n");
        }
        let index = index.map(|i| i.to_string()).unwrap_or_default();
        let _ = writeln!(self.text, "{metric},{index},{value:.9}");
    }

    fn write(self, path: &Path) -> Result<()> {
        let mut outputs = Outputs::default();
        let tmp = outputs.stage(path)?;
        fs::write(&tmp, self.text).with_context(|| format!("writing {}", tmp.display()))?;
        outputs.commit()
    }
}

pub fn eval_contacts(a: EvalArgs) -> Result<()> {
    let inputs = eval_inputs(&a)?;
    let pred = inputs.pred.contacts(inputs.rate)?;
    let truth = inputs.truth.contacts(inputs.rate)?;
    let score = f1(&pred, &truth)?;
    log::info!("F1 {:.4} (precision {:.4}, recall {:.4})", score.f1, score.precision, score.recall);
    let mut r = Report::default();
    r.row("f1", None, score.f1);
    r.row("precision", None, score.precision);
    r.row("recall", None, score.recall);
    for (k, s) in f1_tolerance_curve(&pred, &truth, a.tolerance_max)?.iter().enumerate() {
        r.row("tolerance_f1", Some(k), s.f1);
    }
    for (b, v) in offcontact_fp_profile(&pred, &truth, a.bins)?.iter().enumerate() {
        r.row("offcontact_fp", Some(b), *v);
    }
    r.write(&a.out)
}

pub fn eval_vgrf(a: EvalArgs) -> Result<()> {
    let inputs = eval_inputs(&a)?;
    let rmse = vgrf_rmse(&inputs.pred.vgrf(inputs.rate)?, &inputs.truth.vgrf(inputs.rate)?)?;
    log::info!("RMSE left {:.5}, right {:.5}", rmse[0], rmse[1]);
    let mut r = Report::default();
    r.row("rmse_left", None, rmse[0]);
    r.row("rmse_right", None, rmse[1]);
    r.write(&a.out)
}

pub fn eval_cop(a: EvalArgs) -> Result<()> {
    let inputs = eval_inputs(&a)?;
    let layout = inputs
        .truth
        .take()
        .or(inputs.pred.take())
        .map_or_else(InsoleLayout::approximate, Take::layout_or_default);
    let mad = cop_mad(
        &inputs.pred.vgrf(inputs.rate)?,
        &inputs.truth.vgrf(inputs.rate)?,
        &layout,
        a.gate_bw,
    )?;
    log::info!("CoP MAD left {:.2} mm, right {:.2} mm", mad[0], mad[1]);
    let mut r = Report::default();
    r.row("cop_mad_left_mm", None, mad[0]);
    r.row("cop_mad_right_mm", None, mad[1]);
    r.write(&a.out)
}

/// `--pred` is the take whose motion is measured; `--truth` supplies contacts.
pub fn eval_footskate(a: EvalArgs) -> Result<()> {
    let inputs = eval_inputs(&a)?;
    let take = inputs
        .pred
        .take()
        .ok_or_else(|| invalid("footskate needs --pred to be a take directory"))?;
    let contacts = inputs.truth.contacts(inputs.rate)?;
    let value = footskate(&take.poses, &contacts, &take.skeleton)?;
    log::info!("footskate {value:.5} m/s");
    let mut r = Report::default();
    r.row("footskate", None, value);
    r.write(&a.out)
}

pub fn perturb_noise(a: NoiseArgs) -> Result<()> {
    let take = load_take(&a.take)?;
    let noisy = add_noise(&take.poses, a.sigma_m, &mut rng::stream(a.seed, &[NOISE_KEY]))?;
    let out_take = Take {
        original_poses: Some(take.original_poses.clone().unwrap_or_else(|| take.poses.clone())),
        poses: noisy,
        // Noisy positions no longer follow the joint rotations.
        local_motion: None,
        ..take
    };
    let mut outputs = Outputs::default();
    save_take(&out_take, outputs.stage(&a.out)?)?;
    outputs.commit()
}

#[derive(Serialize)]
struct BlendRecord {
    take_a: String,
    start_a: usize,
    take_b: String,
    start_b: usize,
    len: usize,
    matched: [bool; 2],
}

pub fn perturb_blend(a: BlendArgs) -> Result<()> {
    let dirs = take_dirs(&a.data)?;
    let takes = load_takes(&dirs)?;
    let pairs = mine_blend_pairs(&takes, a.window, a.stride)?;
    log::info!("{} blend pairs mined", pairs.len());
    let chosen: Vec<usize> = match a.count {
        None => (0..pairs.len()).collect(),
        Some(c) if c > pairs.len() => {
            bail!(Invalid(format!("--count {c} exceeds the {} pairs found", pairs.len())))
        }
        Some(c) => {
            let mut idx = index::sample(&mut rng::stream(a.seed, &[BLEND_KEY]), pairs.len(), c).into_vec();
            idx.sort_unstable();
            idx
        }
    };
    let mut outputs = Outputs::default();
    let dir = outputs.stage(&a.out)?;
    fs::create_dir(&dir).map_err(|e| grfnet_core::Error::io(&dir, e))?;
    let name = |i: usize| dirs[i].display().to_string();
    let mut records = Vec::new();
    for (n, &i) in chosen.iter().enumerate() {
        let p = &pairs[i];
        save_take(&blend_pair(&takes, p, a.schedule.into())?, dir.join(format!("blend_{n:03}")))?;
        records.push(BlendRecord {
            take_a: name(p.a.take),
            start_a: p.a.start,
            take_b: name(p.b.take),
            start_b: p.b.start,
            len: p.len,
            matched: p.matched,
        });
    }
    write_json(&records, &dir.join("pairs.json"))?;
    outputs.commit()
}

pub fn cleanup(a: CleanupArgs) -> Result<()> {
    let params = contact_params(&a.contact)?;
    let weights = match &a.weights {
        Some(p) => read_json::<IkWeights>(p)?,
        None => IkWeights::default(),
    };
    check(weights.check())?;
    let take = load_take(&a.take)?;
    let result = match &a.model {
        Some(m) => cleanup_pipeline(&take, &load_model(m)?, &params, &weights)?,
        None => {
            let motion = take.local_motion.as_ref().ok_or_else(|| invalid("take has no joint rotations"))?;
            let contacts = take
                .contacts
                .as_ref()
                .ok_or_else(|| invalid("take has no contact labels; pass --model"))?;
            cleanup_with_contacts(motion, &take.skeleton, contacts, None, &weights)?
        }
    };
    let r = &result.report;
    log::info!(
        "footskate {:.4} -> {:.4} m/s, mean deviation {:.4} m, {} constraints",
        r.footskate_before,
        r.footskate_after,
        r.mean_deviation_m,
        r.constraints
    );
    let report = result.report.clone();
    let out_take = Take {
        original_poses: Some(take.original_poses.clone().unwrap_or_else(|| take.poses.clone())),
        local_motion: Some(result.motion),
        poses: result.poses,
        contacts: Some(result.contacts),
        ..take
    };
    let mut outputs = Outputs::default();
    let dir = outputs.stage(&a.out)?;
    save_take(&out_take, &dir)?;
    write_json(&report, &dir.join("cleanup.json"))?;
    outputs.commit()
}
