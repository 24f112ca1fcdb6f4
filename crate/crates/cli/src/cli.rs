use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "attncert",
    version,
    about = "Certify, attack and score attention maps of a toy ViT under diffusion smoothing"
)]
#[command(args_override_self = true)]
pub struct Cli {
    /// Worker threads (default: one per core). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// `key = value` file supplying defaults for the subcommand's flags.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic left/right blob dataset.
    GenData(GenDataArgs),
    /// Write randomly initialized toy ViT weights.
    InitModel(InitModelArgs),
    /// Fit the classification head by ridge regression on a dataset.
    FitHead(FitHeadArgs),
    /// Certify each input of a dataset and write a CSV report.
    Certify(CertifyArgs),
    /// Attack certified inputs at multiples of their radius.
    Verify(VerifyArgs),
    /// Score saliency maps against ground-truth masks.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub count: usize,
    /// Image side length in pixels.
    #[arg(long, default_value_t = 16)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InitModelArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 16)]
    pub size: usize,
    #[arg(long, default_value_t = 4)]
    pub patch: usize,
    /// Token width.
    #[arg(long, default_value_t = 8)]
    pub q: usize,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    /// Output model directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitHeadArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset directory or manifest.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 1e-3)]
    pub ridge: f64,
    /// Output model directory (may equal --model).
    #[arg(long)]
    pub out: PathBuf,
}

/// Model and smoothing pipeline shared by `certify` and `eval`.
#[derive(Debug, Args, Clone)]
pub struct PipelineArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Attention read-out: raw (last layer) or rollout.
    #[arg(long, default_value = "raw")]
    pub attention: String,
    /// identity or shrinkage.
    #[arg(long, default_value = "identity")]
    pub denoiser: String,
    /// Pixel-domain prior mean of the shrinkage denoiser.
    #[arg(long, default_value_t = 0.5)]
    pub prior_mean: f64,
    /// Pixel-domain prior variance of the shrinkage denoiser.
    #[arg(long, default_value_t = 0.08)]
    pub prior_var: f64,
    #[arg(long, default_value_t = 0.25)]
    pub sigma: f64,
    #[arg(long, default_value_t = 2.0)]
    pub range_scale: f64,
    /// Dataset directory or manifest.
    #[arg(long)]
    pub input: PathBuf,
}

#[derive(Debug, Args)]
pub struct CertifyArgs {
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[arg(long, default_value_t = 4096)]
    pub m: usize,
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    #[arg(long, default_value_t = 0.75)]
    pub beta: f64,
    /// l2 or linf.
    #[arg(long, default_value = "l2")]
    pub norm: String,
    /// sqrt_d or d.
    #[arg(long, default_value = "sqrt_d")]
    pub linf_div: String,
    /// plugin or binomial:LEVEL.
    #[arg(long, default_value = "plugin")]
    pub ci: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Report CSV; a run record is written next to it as `<out>.meta`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// CSV written by `certify` (its `.meta` record must sit next to it).
    #[arg(long)]
    pub cert_report: PathBuf,
    /// Comma-separated multiples of the certified radius.
    #[arg(long, default_value = "1.0,1.5,2.0", value_delimiter = ',')]
    pub factors: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    pub attempts: usize,
    /// PGD steps per attempt.
    #[arg(long, default_value_t = 10)]
    pub steps: usize,
    /// Draws per loss evaluation inside the attack.
    #[arg(long, default_value_t = 8)]
    pub attack_m: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    /// raw, rollout, smoothed, oracle (the mask itself) or random.
    #[arg(long, default_value = "smoothed")]
    pub saliency_mode: String,
    /// `all` or a comma-separated subset of pixel_accuracy, miou,
    /// average_precision, p_auc_pos, p_auc_neg, s_faith.
    #[arg(long, default_value = "all")]
    pub metrics: String,
    /// Draws for smoothed maps and the perturbation test.
    #[arg(long, default_value_t = 256)]
    pub m: usize,
    /// ℓ∞ radius of the random perturbation used by s_faith.
    #[arg(long, default_value_t = 8.0 / 255.0)]
    pub perturb_radius: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for per-input saliency and fused-map FVTN dumps.
    #[arg(long)]
    pub dump_maps: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}
