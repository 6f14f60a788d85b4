use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use grfnet_core::nn::Variant;
use grfnet_core::perturb::{BlendSchedule, BLEND_WINDOW};

#[derive(Debug, Parser)]
#[command(name = "grfnet", version, about = "vGRF and foot contact estimation from skeletal motion")]
#[command(propagate_version = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic walking takes.
    Synth(SynthArgs),
    /// Align insole data with the motion using the jump markers.
    Sync(SyncArgs),
    /// Label foot contacts from the measured vGRF.
    Label(LabelArgs),
    /// Position and velocity thresholding baseline.
    #[command(subcommand)]
    Ot(OtCommand),
    /// Train an estimator.
    Train(TrainArgs),
    /// Run a trained model on a take.
    Estimate(EstimateArgs),
    /// Score predictions against ground truth.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Degrade motion with noise or blending.
    #[command(subcommand)]
    Perturb(PerturbCommand),
    /// Remove footskate with contact-constrained IK.
    Cleanup(CleanupArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub minutes: f64,
    #[arg(long, default_value_t = 100.0, allow_negative_numbers = true)]
    pub rate: f64,
    /// Motion capture rate when it differs from the insole rate.
    #[arg(long, allow_negative_numbers = true)]
    pub mocap_rate: Option<f64>,
    /// Longest take, seconds.
    #[arg(long, default_value_t = 60.0, allow_negative_numbers = true)]
    pub take_s: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub jump_markers: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SyncArgs {
    #[arg(long)]
    pub take: PathBuf,
    #[arg(long, default_value_t = 5.0, allow_negative_numbers = true)]
    pub max_lag_s: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone, Copy)]
pub struct ContactArgs {
    #[arg(long, default_value_t = 0.05, allow_negative_numbers = true)]
    pub sigma_s: f64,
    #[arg(long, default_value_t = 0.05, allow_negative_numbers = true)]
    pub raw_bw: f64,
    #[arg(long, default_value_t = 0.10, allow_negative_numbers = true)]
    pub gate_bw: f64,
    #[arg(long, default_value_t = 0.1, allow_negative_numbers = true)]
    pub min_phase_s: f64,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    #[arg(long)]
    pub take: PathBuf,
    #[command(flatten)]
    pub contact: ContactArgs,
    /// Labelled copy of the take.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum OtCommand {
    /// Grid-search thresholds on labelled takes.
    Fit(OtFitArgs),
    /// Label a take with fitted thresholds.
    Apply(OtApplyArgs),
}

#[derive(Debug, Args)]
pub struct OtFitArgs {
    /// Take directories, or directories of takes.
    #[arg(long, num_args = 1.., required = true)]
    pub data: Vec<PathBuf>,
    #[arg(long, default_value_t = 17)]
    pub grid: usize,
    #[arg(long, default_value_t = 3)]
    pub levels: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct OtApplyArgs {
    #[arg(long)]
    pub thresholds: PathBuf,
    #[arg(long)]
    pub take: PathBuf,
    /// Raw contact labels, `T×2×2` u8.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum VariantArg {
    Vgrf,
    Contact,
    Dual,
    Mlp3,
    Linear,
    LinearFeet,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Vgrf => Variant::Vgrf,
            VariantArg::Contact => Variant::Contact,
            VariantArg::Dual => Variant::Dual,
            VariantArg::Mlp3 => Variant::Mlp3,
            VariantArg::Linear => Variant::Linear,
            VariantArg::LinearFeet => Variant::LinearFeet,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub data: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "vgrf")]
    pub variant: VariantArg,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub width_scale: f64,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of takes held out for validation.
    #[arg(long, default_value_t = 0.1, allow_negative_numbers = true)]
    pub val_split: f64,
    #[arg(long, allow_negative_numbers = true)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Window length in frames.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub max_batches: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Augmentation settings as JSON.
    #[arg(long)]
    pub augment: Option<PathBuf>,
    /// Skeleton basis for morphology sampling.
    #[arg(long)]
    pub basis: Option<PathBuf>,
    /// Per-epoch losses as CSV.
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub take: PathBuf,
    /// Estimated vGRF, `T×2×16` f32.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Estimated contacts, `T×2×2` u8.
    #[arg(long)]
    pub contacts_out: Option<PathBuf>,
    #[command(flatten)]
    pub contact: ContactArgs,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// F1, tolerance curve and off-contact false-positive profile.
    Contacts(EvalArgs),
    /// Per-foot vGRF RMSE.
    Vgrf(EvalArgs),
    /// Per-foot median CoP distance.
    Cop(EvalArgs),
    /// Mean horizontal foot speed during contact.
    Footskate(EvalArgs),
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Take directory or raw prediction file.
    #[arg(long)]
    pub pred: PathBuf,
    /// Take directory or raw ground-truth file.
    #[arg(long)]
    pub truth: PathBuf,
    /// Rate of raw files when neither side is a take.
    #[arg(long, default_value_t = 100.0, allow_negative_numbers = true)]
    pub rate: f64,
    #[arg(long, default_value_t = 10)]
    pub tolerance_max: usize,
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
    #[arg(long, default_value_t = 0.10, allow_negative_numbers = true)]
    pub gate_bw: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum PerturbCommand {
    /// Gaussian noise on every joint position.
    Noise(NoiseArgs),
    /// Blends between windows with matching contact patterns.
    Blend(BlendArgs),
}

#[derive(Debug, Args)]
pub struct NoiseArgs {
    #[arg(long)]
    pub take: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    pub sigma_m: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScheduleArg {
    Smoothstep,
    Linear,
}

impl From<ScheduleArg> for BlendSchedule {
    fn from(s: ScheduleArg) -> Self {
        match s {
            ScheduleArg::Smoothstep => BlendSchedule::Smoothstep,
            ScheduleArg::Linear => BlendSchedule::Linear,
        }
    }
}

#[derive(Debug, Args)]
pub struct BlendArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub data: Vec<PathBuf>,
    #[arg(long, default_value_t = BLEND_WINDOW)]
    pub window: usize,
    #[arg(long, default_value_t = 10)]
    pub stride: usize,
    /// Blends to write, drawn without replacement; all pairs when omitted.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long, value_enum, default_value = "smoothstep")]
    pub schedule: ScheduleArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CleanupArgs {
    /// vGRF model; omit to use the take's own contacts.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub take: PathBuf,
    /// IK weights as JSON.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[command(flatten)]
    pub contact: ContactArgs,
    #[arg(long)]
    pub out: PathBuf,
}
