use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{input_features, Model, Outputs};
use super::tape::{Tape, Var};
use crate::augment::{make_windows, training_sample, AugmentConfig, SkeletonBasis, TrainingSample, WindowRef};
use crate::error::{Error, Result};
use crate::grf::contact_labels;
use crate::rng;
use crate::types::Take;

const DROPOUT_KEY: u64 = 0xd0;
const SHUFFLE_KEY: u64 = 0x5f;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 3e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 64,
        }
    }
}

impl OptimizerConfig {
    pub fn check(&self) -> Vec<String> {
        let mut issues = Vec::new();
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            issues.push("learning rate must be finite and nonnegative".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            issues.push("Adam betas must lie in [0, 1)".into());
        }
        if !(self.eps > 0.0) {
            issues.push("eps must be positive".into());
        }
        if self.batch_size == 0 {
            issues.push("batch size must be positive".into());
        }
        issues
    }
}

/// Adam state and step counter around a model in training mode.
pub struct Trainer {
    pub model: Model,
    pub opt: OptimizerConfig,
    pub seed: u64,
    pub steps: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Trainer {
    pub fn new(mut model: Model, opt: OptimizerConfig, seed: u64) -> Result<Self> {
        let issues = opt.check();
        if !issues.is_empty() {
            return Err(Error::Validation(issues));
        }
        model.training = true;
        let zeros = |m: &Model| m.params.iter().map(|p| vec![0.0; p.data.len()]).collect();
        Ok(Trainer {
            m: zeros(&model),
            v: zeros(&model),
            model,
            opt,
            seed,
            steps: 0,
        })
    }

    /// Loss and parameter gradients of one sample.
    fn sample_grads(&self, sample: &TrainingSample, dropout_key: Option<u64>) -> Result<(f64, Vec<Vec<f32>>)> {
        let mut tape = Tape::<f32>::new();
        let params = self.model.leaves(&mut tape);
        let (x, t, w) = input_features(&self.model.config, &sample.input)?;
        let xv = tape.constant(x, t, w);
        let mut drop_rng = dropout_key.map(|k| rng::stream(self.seed, &[DROPOUT_KEY, self.steps, k]));
        let out = self.model.graph(&mut tape, &params, xv, drop_rng.as_mut());
        let loss = sample_loss(&mut tape, &out, sample)?;
        let value = tape.scalar(loss) as f64;
        let mut grads = tape.backward(loss);
        let g = params
            .iter()
            .zip(&self.model.params)
            .map(|(&v, p)| grads.take(v).unwrap_or_else(|| vec![0.0; p.data.len()]))
            .collect();
        Ok((value, g))
    }

    /// One Adam update on the mean loss of `batch`. Returns that loss.
    pub fn step(&mut self, batch: &[TrainingSample]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let results: Vec<Result<(f64, Vec<Vec<f32>>)>> = batch
            .par_iter()
            .enumerate()
            .map(|(i, s)| self.sample_grads(s, Some(i as u64)))
            .collect();
        let n = batch.len() as f32;
        let mut loss = 0.0;
        let mut grad: Vec<Vec<f32>> = self.model.params.iter().map(|p| vec![0.0; p.data.len()]).collect();
        for r in results {
            let (l, g) = r?;
            loss += l;
            for (acc, gi) in grad.iter_mut().zip(g) {
                for (a, b) in acc.iter_mut().zip(gi) {
                    *a += b / n;
                }
            }
        }
        loss /= batch.len() as f64;
        let bad = grad
            .iter()
            .zip(&self.model.params)
            .find(|(g, _)| g.iter().any(|v| !v.is_finite()))
            .map(|(_, p)| p.name.clone());
        if !loss.is_finite() || bad.is_some() {
            return Err(Error::NonFiniteLoss {
                iteration: self.steps as usize,
                parameter: bad.unwrap_or_else(|| "loss".into()),
            });
        }
        self.steps += 1;
        let o = self.opt;
        let t = self.steps as i32;
        let c1 = 1.0 - o.beta1.powi(t);
        let c2 = 1.0 - o.beta2.powi(t);
        let (b1, b2) = (o.beta1 as f32, o.beta2 as f32);
        let lr = o.learning_rate;
        for (((p, g), m), v) in self.model.params.iter_mut().zip(&grad).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..g.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mh = m[i] as f64 / c1;
                let vh = v[i] as f64 / c2;
                p.data[i] -= (lr * mh / (vh.sqrt() + o.eps)) as f32;
            }
        }
        Ok(loss)
    }

    /// Mean inference-mode loss over `samples`.
    pub fn evaluate(&self, samples: &[TrainingSample]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("no validation samples".into()));
        }
        let losses: Vec<Result<f64>> = samples.par_iter().map(|s| self.sample_loss_eval(s)).collect();
        let mut total = 0.0;
        for l in losses {
            total += l?;
        }
        Ok(total / samples.len() as f64)
    }

    fn sample_loss_eval(&self, sample: &TrainingSample) -> Result<f64> {
        let mut tape = Tape::<f32>::new();
        let params: Vec<Var> = self
            .model
            .params
            .iter()
            .map(|p| {
                let (r, c) = p.matrix_shape();
                tape.constant(p.data.clone(), r, c)
            })
            .collect();
        let (x, t, w) = input_features(&self.model.config, &sample.input)?;
        let xv = tape.constant(x, t, w);
        let out = self.model.graph(&mut tape, &params, xv, None);
        let loss = sample_loss(&mut tape, &out, sample)?;
        Ok(tape.scalar(loss) as f64)
    }

    pub fn into_model(mut self) -> Model {
        self.model.training = false;
        self.model
    }
}

/// MSLE on vGRF outputs, BCE on contact logits, their sum for two heads.
fn sample_loss(tape: &mut Tape<f32>, out: &Outputs<Var>, sample: &TrainingSample) -> Result<Var> {
    let mut terms = Vec::new();
    if let Some(f) = out.vgrf {
        let target = sample
            .vgrf
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("training sample lacks vGRF targets".into()))?;
        terms.push(tape.msle(f, target.values.iter().copied().collect()));
    }
    if let Some(z) = out.logits {
        let labels: Vec<f32> = match (&sample.contacts, &sample.vgrf) {
            (Some(c), _) => c.labels.iter().map(|&v| v as f32).collect(),
            (None, Some(v)) => {
                let layout = crate::types::InsoleLayout::approximate();
                let c = contact_labels(v, &layout, &crate::grf::ContactParams::default())?;
                c.labels.iter().map(|&v| v as f32).collect()
            }
            _ => return Err(Error::InvalidArgument("training sample lacks contact labels".into())),
        };
        terms.push(tape.bce(z, labels));
    }
    let mut loss = terms[0];
    for &t in &terms[1..] {
        loss = tape.add(loss, t);
    }
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub optimizer: OptimizerConfig,
    pub augment: AugmentConfig,
    /// Epochs without validation improvement before stopping.
    pub patience: Option<usize>,
    /// Caps the batches drawn per epoch.
    pub max_batches_per_epoch: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            optimizer: OptimizerConfig::default(),
            augment: AugmentConfig::default(),
            patience: None,
            max_batches_per_epoch: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: Option<usize>,
    pub steps: u64,
}

/// Validation windows: unaugmented, non-overlapping, whole takes when shorter
/// than a window.
fn validation_samples(takes: &[Take], cfg: &AugmentConfig) -> Result<Vec<TrainingSample>> {
    let mut out = Vec::new();
    for take in takes {
        let n = take.frames();
        let len = cfg.window.min(n);
        if len == 0 {
            continue;
        }
        let plain = AugmentConfig {
            window: len,
            ..cfg.disabled()
        };
        let mut start = 0;
        while start + len <= n {
            out.push(training_sample(take, WindowRef { take: 0, start }, None, &plain, 0, 0)?);
            start += len;
        }
    }
    Ok(out)
}

/// Mini-batch Adam over augmented windows, keeping the parameters of the
/// best validation epoch.
pub fn train(
    model: Model,
    train_takes: &[Take],
    val_takes: &[Take],
    basis: Option<&SkeletonBasis>,
    cfg: &TrainConfig,
) -> Result<(Model, TrainHistory)> {
    cfg.augment.validate()?;
    let mut trainer = Trainer::new(model, cfg.optimizer, cfg.seed)?;
    let mut history = TrainHistory::default();
    if cfg.epochs == 0 {
        return Ok((trainer.into_model(), history));
    }
    let (windows, _) = make_windows(train_takes, &cfg.augment);
    if windows.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no training take has {} frames",
            cfg.augment.window
        )));
    }
    let val = validation_samples(val_takes, &cfg.augment)?;
    let mut best: Option<(f64, Model)> = None;
    let mut since_best = 0;
    let aug = AugmentConfig {
        seed: cfg.seed ^ cfg.augment.seed,
        ..cfg.augment.clone()
    };
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..windows.len()).collect();
        order.shuffle(&mut rng::stream(cfg.seed, &[SHUFFLE_KEY, epoch as u64]));
        let bs = cfg.optimizer.batch_size;
        let mut batches: Vec<&[usize]> = order.chunks(bs).collect();
        if let Some(cap) = cfg.max_batches_per_epoch {
            batches.truncate(cap);
        }
        let mut sum = 0.0;
        for idx in &batches {
            let batch = idx
                .par_iter()
                .map(|&i| {
                    let w = windows[i];
                    training_sample(&train_takes[w.take], w, basis, &aug, epoch as u64, i as u64)
                })
                .collect::<Result<Vec<_>>>()?;
            sum += trainer.step(&batch)?;
        }
        let train_loss = sum / batches.len() as f64;
        let val_loss = if val.is_empty() {
            None
        } else {
            Some(trainer.evaluate(&val)?)
        };
        log::info!("epoch {epoch}: train {train_loss:.6} val {val_loss:?}");
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if let Some(v) = val_loss {
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, trainer.model.clone()));
                history.best_epoch = Some(epoch);
                since_best = 0;
            } else {
                since_best += 1;
                if cfg.patience.is_some_and(|p| since_best >= p) {
                    break;
                }
            }
        }
    }
    history.steps = trainer.steps;
    let mut model = match best {
        Some((_, m)) => m,
        None => {
            history.best_epoch = history.epochs.last().map(|r| r.epoch);
            trainer.into_model()
        }
    };
    model.training = false;
    Ok((model, history))
}

pub fn write_history_csv(history: &TrainHistory, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::from("epoch,train_loss,val_loss\n");
    for r in &history.epochs {
        let val = r.val_loss.map(|v| format!("{v:.9}")).unwrap_or_default();
        text.push_str(&format!("{},{:.9},{}\n", r.epoch, r.train_loss, val));
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::{ModelConfig, Variant};
    use crate::synth::{generate_gait, GaitConfig};

    fn sample() -> TrainingSample {
        let take = generate_gait(&GaitConfig {
            duration_s: 4.0,
            ..Default::default()
        })
        .unwrap();
        let cfg = AugmentConfig {
            window: 120,
            ..AugmentConfig::default().disabled()
        };
        training_sample(&take, WindowRef { take: 0, start: 100 }, None, &cfg, 0, 0).unwrap()
    }

    fn small(variant: Variant) -> Model {
        let cfg = ModelConfig {
            variant,
            width_scale: 0.125,
            ..Default::default()
        };
        Model::new(cfg, &mut rng::seeded(2)).unwrap()
    }

    #[test]
    fn zero_learning_rate_is_a_fixed_point() {
        let m = small(Variant::Vgrf);
        let opt = OptimizerConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        let mut tr = Trainer::new(m.clone(), opt, 0).unwrap();
        let s = vec![sample()];
        for _ in 0..5 {
            tr.step(&s).unwrap();
        }
        assert_eq!(tr.model.params, m.params);
    }

    #[test]
    fn loss_decreases_on_one_window() {
        let opt = OptimizerConfig {
            learning_rate: 1e-3,
            ..Default::default()
        };
        let s = vec![sample()];
        let mut tr = Trainer::new(small(Variant::Vgrf), opt, 0).unwrap();
        let first = tr.evaluate(&s).unwrap();
        for _ in 0..200 {
            tr.step(&s).unwrap();
        }
        let last = tr.evaluate(&s).unwrap();
        assert!(last < 0.5 * first, "{first} -> {last}");
    }

    #[test]
    fn every_variant_trains_without_error() {
        let s = vec![sample()];
        for v in Variant::ALL {
            let mut tr = Trainer::new(small(v), OptimizerConfig::default(), 1).unwrap();
            let l = tr.step(&s).unwrap();
            assert!(l.is_finite() && l > 0.0, "{v}");
        }
    }

    #[test]
    fn non_finite_input_is_diagnosed() {
        let mut s = sample();
        s.input.positions[[3, 4, 1]] = f32::NAN;
        let mut tr = Trainer::new(small(Variant::Vgrf), OptimizerConfig::default(), 1).unwrap();
        match tr.step(&[s]) {
            Err(Error::NonFiniteLoss { iteration, parameter }) => {
                assert_eq!(iteration, 0);
                assert!(!parameter.is_empty());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn training_is_reproducible() {
        let take = generate_gait(&GaitConfig {
            duration_s: 6.0,
            ..Default::default()
        })
        .unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            optimizer: OptimizerConfig {
                batch_size: 4,
                learning_rate: 1e-3,
                ..Default::default()
            },
            augment: AugmentConfig {
                window: 120,
                stride: 60,
                ..Default::default()
            },
            seed: 11,
            ..Default::default()
        };
        let takes = vec![take.clone()];
        let run = || train(small(Variant::Vgrf), &takes, &takes, None, &cfg).unwrap();
        let (a, ha) = run();
        let (b, hb) = run();
        assert_eq!(ha, hb);
        assert_eq!(a.params, b.params);
        assert_eq!(ha.epochs.len(), 2);
        let (c, hc) = train(
            small(Variant::Vgrf),
            &takes,
            &takes,
            None,
            &TrainConfig { epochs: 0, ..cfg },
        )
        .unwrap();
        assert!(hc.epochs.is_empty());
        assert_eq!(c.params, small(Variant::Vgrf).params);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.csv");
        write_history_csv(&ha, &p).unwrap();
        let text = fs::read_to_string(p).unwrap();
        assert!(text.starts_with("epoch,train_loss,val_loss\n0,"));
        assert_eq!(text.lines().count(), 3);
    }
}
