use std::fmt;
use std::str::FromStr;

use ndarray::Array3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::Scalar;
use crate::error::{Error, Result};
use crate::grf::{contact_labels, ContactParams};
use crate::rng::StreamRng;
use crate::types::{ContactSequence, InsoleLayout, PoseSequence, VgrfSequence, CELLS};

/// Per-frame vGRF outputs, `2 feet × 16 cells`.
pub const VGRF_OUTPUTS: usize = 2 * CELLS;
/// Per-frame contact logits, `2 feet × (heel, toe)`.
pub const CONTACT_OUTPUTS: usize = 4;
/// Hidden width of the three-layer perceptron baseline.
pub const MLP_WIDTH: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Vgrf,
    Contact,
    Dual,
    Mlp3,
    Linear,
    LinearFeet,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Vgrf,
        Variant::Contact,
        Variant::Dual,
        Variant::Mlp3,
        Variant::Linear,
        Variant::LinearFeet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Vgrf => "vgrf",
            Variant::Contact => "contact",
            Variant::Dual => "dual",
            Variant::Mlp3 => "mlp3",
            Variant::Linear => "linear",
            Variant::LinearFeet => "linear-feet",
        }
    }

    pub fn has_conv_trunk(self) -> bool {
        matches!(self, Variant::Vgrf | Variant::Contact | Variant::Dual)
    }

    pub fn outputs_vgrf(self) -> bool {
        matches!(self, Variant::Vgrf | Variant::Dual)
    }

    pub fn outputs_contacts(self) -> bool {
        self != Variant::Vgrf
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown model variant `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    pub fc_width: usize,
    pub dropout_p: f64,
    pub joints: usize,
    pub width_scale: f64,
    /// Left ankle, left toe, right ankle, right toe; inputs of the foot-only variants.
    pub foot_joints: [usize; 4],
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::Vgrf,
            conv_channels: vec![128, 128, 256, 256],
            kernel: 7,
            fc_width: 256,
            dropout_p: 0.2,
            joints: crate::types::DEFAULT_JOINTS,
            width_scale: 1.0,
            foot_joints: [21, 22, 17, 18],
        }
    }
}

impl ModelConfig {
    pub fn with_variant(variant: Variant) -> Self {
        ModelConfig {
            variant,
            ..Default::default()
        }
    }

    pub fn check(&self) -> Vec<String> {
        let mut issues = Vec::new();
        if self.kernel % 2 == 0 {
            issues.push(format!("kernel must be odd, got {}", self.kernel));
        }
        if self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
            issues.push("conv channels must be a nonempty list of positive counts".into());
        }
        if self.fc_width == 0 {
            issues.push("fc_width must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            issues.push(format!("dropout_p must lie in [0, 1), got {}", self.dropout_p));
        }
        if !(self.width_scale > 0.0 && self.width_scale.is_finite()) {
            issues.push(format!("width_scale must be positive, got {}", self.width_scale));
        }
        if self.joints == 0 {
            issues.push("joint count must be positive".into());
        }
        if self.foot_joints.iter().any(|&j| j >= self.joints) {
            issues.push("foot joint index out of range".into());
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

    fn scaled(&self, c: usize) -> usize {
        ((c as f64 * self.width_scale).round() as usize).max(1)
    }

    pub fn input_width(&self) -> usize {
        match self.variant {
            Variant::Vgrf | Variant::Contact | Variant::Dual => 3 * self.joints,
            Variant::Linear => 6 * self.joints,
            Variant::Mlp3 | Variant::LinearFeet => 6 * self.foot_joints.len(),
        }
    }

    /// Parameter names and shapes in storage order.
    pub fn manifest(&self) -> Vec<(String, Vec<usize>)> {
        fn dense(out: &mut Vec<(String, Vec<usize>)>, name: &str, i: usize, o: usize) {
            out.push((format!("{name}.weight"), vec![i, o]));
            out.push((format!("{name}.bias"), vec![o]));
        }
        let mut out = Vec::new();
        match self.variant {
            Variant::Vgrf | Variant::Contact | Variant::Dual => {
                let mut cin = self.input_width();
                for (i, &c) in self.conv_channels.iter().enumerate() {
                    let c = self.scaled(c);
                    out.push((format!("conv{i}.weight"), vec![self.kernel, cin, c]));
                    out.push((format!("conv{i}.bias"), vec![c]));
                    cin = c;
                }
                let fc = self.scaled(self.fc_width);
                let heads: &[(&str, usize)] = match self.variant {
                    Variant::Vgrf => &[("head", VGRF_OUTPUTS)],
                    Variant::Contact => &[("head", CONTACT_OUTPUTS)],
                    _ => &[("force", VGRF_OUTPUTS), ("contact", CONTACT_OUTPUTS)],
                };
                for &(h, width) in heads {
                    dense(&mut out, &format!("{h}.fc0"), cin, fc);
                    dense(&mut out, &format!("{h}.fc1"), fc, fc);
                    dense(&mut out, &format!("{h}.fc2"), fc, width);
                }
            }
            Variant::Mlp3 => {
                let w = MLP_WIDTH;
                dense(&mut out, "mlp.fc0", self.input_width(), w);
                dense(&mut out, "mlp.fc1", w, w);
                dense(&mut out, "mlp.fc2", w, w);
                dense(&mut out, "mlp.out", w, CONTACT_OUTPUTS);
            }
            Variant::Linear | Variant::LinearFeet => {
                dense(&mut out, "linear", self.input_width(), CONTACT_OUTPUTS);
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.manifest().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Param {
    /// Rows and columns of the 2-D view used on the tape.
    pub fn matrix_shape(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [n] => (1, *n),
            [k, i, o] => (k * i, *o),
            s => (s[..s.len() - 1].iter().product(), s[s.len() - 1]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Vec<Param>,
    pub training: bool,
}

impl Model {
    /// Fan-in uniform initialization, `U(±√(6/fan_in))` weights and zero biases.
    pub fn new(config: ModelConfig, rng: &mut StreamRng) -> Result<Self> {
        config.validate()?;
        let params = config
            .manifest()
            .into_iter()
            .map(|(name, shape)| {
                let len = shape.iter().product();
                let data = if name.ends_with(".bias") {
                    vec![0.0; len]
                } else {
                    let fan_in: usize = shape[..shape.len() - 1].iter().product();
                    let bound = (6.0 / fan_in as f64).sqrt();
                    (0..len).map(|_| rng.random_range(-bound..bound) as f32).collect()
                };
                Param { name, shape, data }
            })
            .collect();
        Ok(Model {
            config,
            params,
            training: false,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Places every parameter on `tape` as a differentiable leaf.
    pub fn leaves<T: Scalar>(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                let (r, c) = p.matrix_shape();
                tape.param(p.data.iter().map(|&v| T::lit(v as f64)).collect(), r, c)
            })
            .collect()
    }

    /// Builds the forward graph. `dropout` supplies the mask stream in
    /// training mode; `None` gives the deterministic inference pass.
    pub fn graph<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &[Var],
        x: Var,
        mut dropout: Option<&mut StreamRng>,
    ) -> Outputs<Var> {
        let cfg = &self.config;
        let p = cfg.dropout_p;
        let mut drop = |tape: &mut Tape<T>, v: Var| -> Var {
            match dropout.as_deref_mut() {
                Some(rng) if p > 0.0 => {
                    let (r, c) = tape.shape(v);
                    let keep = T::lit(1.0 / (1.0 - p));
                    let mask = (0..r * c)
                        .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
                        .collect();
                    tape.mul_const(v, mask)
                }
                _ => v,
            }
        };
        let mut it = params.iter().copied();
        let mut next = || it.next().expect("parameter list matches manifest");
        match cfg.variant {
            Variant::Vgrf | Variant::Contact | Variant::Dual => {
                let mut h = x;
                for _ in &cfg.conv_channels {
                    let (w, b) = (next(), next());
                    let y = tape.conv1d(h, w, Some(b), cfg.kernel);
                    h = tape.elu(y);
                }
                let mut head = |tape: &mut Tape<T>| {
                    let mut z = h;
                    for layer in 0..3 {
                        let (w, b) = (next(), next());
                        let d = drop(tape, z);
                        z = tape.dense(d, w, Some(b));
                        if layer < 2 {
                            z = tape.elu(z);
                        }
                    }
                    z
                };
                match cfg.variant {
                    Variant::Vgrf => {
                        let z = head(tape);
                        Outputs {
                            vgrf: Some(tape.softplus(z)),
                            logits: None,
                        }
                    }
                    Variant::Contact => Outputs {
                        vgrf: None,
                        logits: Some(head(tape)),
                    },
                    _ => {
                        let z = head(tape);
                        let f = tape.softplus(z);
                        let c = head(tape);
                        Outputs {
                            vgrf: Some(f),
                            logits: Some(c),
                        }
                    }
                }
            }
            Variant::Mlp3 => {
                let mut h = x;
                for layer in 0..4 {
                    let (w, b) = (next(), next());
                    h = tape.dense(h, w, Some(b));
                    if layer < 3 {
                        h = tape.relu(h);
                    }
                }
                Outputs {
                    vgrf: None,
                    logits: Some(h),
                }
            }
            Variant::Linear | Variant::LinearFeet => {
                let (w, b) = (next(), next());
                Outputs {
                    vgrf: None,
                    logits: Some(tape.dense(x, w, Some(b))),
                }
            }
        }
    }

    /// Inference pass.
    pub fn forward(&self, poses: &PoseSequence) -> Result<Outputs<Vec<f32>>> {
        let (x, t, w) = input_features(&self.config, poses)?;
        let mut tape = Tape::<f32>::new();
        let params: Vec<Var> = self
            .params
            .iter()
            .map(|p| {
                let (r, c) = p.matrix_shape();
                tape.constant(p.data.clone(), r, c)
            })
            .collect();
        let xv = tape.constant(x, t, w);
        let out = self.graph(&mut tape, &params, xv, None);
        Ok(Outputs {
            vgrf: out.vgrf.map(|v| tape.value(v).to_vec()),
            logits: out.logits.map(|v| tape.value(v).to_vec()),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outputs<V> {
    /// `T×32` nonnegative vGRF components.
    pub vgrf: Option<V>,
    /// `T×4` contact logits.
    pub logits: Option<V>,
}

/// Network inputs for `poses`: raw global positions for the convolutional
/// variants, positions and central-difference velocities for the baselines.
pub fn input_features(cfg: &ModelConfig, poses: &PoseSequence) -> Result<(Vec<f32>, usize, usize)> {
    if poses.joints() != cfg.joints {
        return Err(Error::Shape(format!(
            "model expects {} joints, poses have {}",
            cfg.joints,
            poses.joints()
        )));
    }
    let t = poses.frames();
    if cfg.variant.has_conv_trunk() {
        let x = poses.positions.iter().copied().collect();
        return Ok((x, t, 3 * cfg.joints));
    }
    let joints: Vec<usize> = match cfg.variant {
        Variant::Linear => (0..cfg.joints).collect(),
        _ => cfg.foot_joints.to_vec(),
    };
    let w = 6 * joints.len();
    let mut x = vec![0.0f32; t * w];
    let pos = &poses.positions;
    for f in 0..t {
        let (a, b) = (f.saturating_sub(1), (f + 1).min(t - 1));
        let span = (b - a) as f64 / poses.rate_hz;
        for (k, &j) in joints.iter().enumerate() {
            for c in 0..3 {
                x[f * w + 6 * k + c] = pos[[f, j, c]];
                if span > 0.0 {
                    x[f * w + 6 * k + 3 + c] = ((pos[[b, j, c]] as f64 - pos[[a, j, c]] as f64) / span) as f32;
                }
            }
        }
    }
    Ok((x, t, w))
}

/// vGRF estimate of a vGRF-producing variant.
pub fn predict(model: &Model, poses: &PoseSequence) -> Result<VgrfSequence> {
    let out = model.forward(poses)?;
    let v = out
        .vgrf
        .ok_or_else(|| Error::InvalidArgument(format!("variant `{}` does not estimate vGRF", model.config.variant)))?;
    let t = poses.frames();
    Ok(VgrfSequence {
        values: Array3::from_shape_vec((t, 2, CELLS), v).expect("output shape"),
        rate_hz: poses.rate_hz,
    })
}

/// Contact labels: the contact head when the variant has one, otherwise Γ
/// applied to the vGRF estimate.
pub fn predict_contacts(
    model: &Model,
    poses: &PoseSequence,
    layout: &InsoleLayout,
    params: &ContactParams,
) -> Result<ContactSequence> {
    let out = model.forward(poses)?;
    let t = poses.frames();
    if let Some(z) = out.logits {
        let labels = z.iter().map(|&v| u8::from(v > 0.0)).collect();
        return Ok(ContactSequence {
            labels: Array3::from_shape_vec((t, 2, 2), labels).expect("output shape"),
            rate_hz: poses.rate_hz,
        });
    }
    let v = VgrfSequence {
        values: Array3::from_shape_vec((t, 2, CELLS), out.vgrf.expect("vgrf variant")).expect("output shape"),
        rate_hz: poses.rate_hz,
    };
    derive_contacts(&v, layout, params)
}

pub fn derive_contacts(vgrf: &VgrfSequence, layout: &InsoleLayout, params: &ContactParams) -> Result<ContactSequence> {
    contact_labels(vgrf, layout, params)
}

pub fn msle_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::Shape(format!("msle: {} vs {} elements", pred.len(), target.len())));
    }
    if pred.iter().chain(target).any(|&v| !(v >= 0.0)) {
        return Err(Error::InvalidArgument("msle inputs must be nonnegative".into()));
    }
    let mut tape = Tape::<f64>::new();
    let p = tape.constant(pred.to_vec(), 1, pred.len());
    let l = tape.msle(p, target.to_vec());
    Ok(tape.scalar(l))
}

pub fn bce_loss(logits: &[f64], labels: &[f64]) -> Result<f64> {
    if logits.len() != labels.len() {
        return Err(Error::Shape(format!("bce: {} vs {} elements", logits.len(), labels.len())));
    }
    if labels.iter().any(|&c| c != 0.0 && c != 1.0) {
        return Err(Error::InvalidArgument("bce labels must be 0 or 1".into()));
    }
    let mut tape = Tape::<f64>::new();
    let z = tape.constant(logits.to_vec(), 1, logits.len());
    let l = tape.bce(z, labels.to_vec());
    Ok(tape.scalar(l))
}
