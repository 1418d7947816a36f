//! Argument definitions and the config-file overlay.
//!
//! Precedence: built-in defaults < `--config` JSON < explicit flags. The
//! config file maps onto [`RunConfig`]; unknown keys are rejected.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use ctharm_core::nn::{Arch, ReconLoss};
use ctharm_core::pipeline::RunConfig;

#[derive(Parser, Debug)]
#[command(
    name = "ctharm",
    about = "CT reconstruction-kernel harmonization on synthetic phantoms",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a paired phantom dataset.
    Phantom {
        #[command(subcommand)]
        command: PhantomCommand,
    },
    /// Train pipeline phases.
    Train {
        #[command(subcommand)]
        command: TrainCommand,
    },
    /// Standardize volumes through the trained pipeline.
    Standardize(StandardizeArgs),
    /// Extract radiomic features from a volume.
    Features(FeaturesArgs),
    /// Compute baseline and model CCC / relative-error reports.
    Evaluate(EvaluateArgs),
    /// Render CCC CSVs as a text table; optionally dump PGM slices.
    Report(ReportArgs),
}

#[derive(Subcommand, Debug)]
pub enum PhantomCommand {
    /// Render n paired scans plus a manifest into a directory.
    Gen(PhantomGenArgs),
}

#[derive(Args, Debug)]
pub struct PhantomGenArgs {
    /// Output directory for volumes and manifest.json.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Number of pairs.
    #[arg(long, default_value_t = 64)]
    pub n: usize,
    /// Master seed.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Volume dims as NX,NY,NZ.
    #[arg(long, default_value = "64,64,4", value_parser = parse_dims)]
    pub dims: (usize, usize, usize),
    /// Fraction of pairs assigned to the eval split.
    #[arg(long, default_value_t = 0.5)]
    pub eval_fraction: f32,
    /// Smooth-kernel Gaussian sigma (voxels).
    #[arg(long, default_value_t = 1.5)]
    pub smooth_sigma: f32,
    /// Sharp-kernel unsharp amount.
    #[arg(long, default_value_t = 1.0)]
    pub sharp_amount: f32,
    /// Sharp-kernel blur sigma (voxels).
    #[arg(long, default_value_t = 1.0)]
    pub sharp_sigma: f32,
    /// Additive Gaussian voxel noise sigma (HU).
    #[arg(long, default_value_t = 5.0)]
    pub noise_sigma: f32,
}

#[derive(Subcommand, Debug)]
pub enum TrainCommand {
    /// Phase 1: encoder-decoder autoencoding.
    Phase1(TrainArgs),
    /// Phase 2: conditional latent denoiser (frozen encoder-decoder).
    Phase2(TrainArgs),
}

/// Flags shared by both training phases; `None` means "fall back to the
/// config file, then to the default".
#[derive(Args, Debug)]
pub struct TrainArgs {
    /// JSON run-config overlay.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset manifest path.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Output directory for checkpoints, curves, and run manifests.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Phase-1 checkpoint (required for phase 2).
    #[arg(long)]
    pub phase1: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Encoder-decoder architecture.
    #[arg(long, value_parser = parse_arch)]
    pub arch: Option<Arch>,
    /// Reconstruction loss.
    #[arg(long, value_parser = parse_recon)]
    pub recon_loss: Option<ReconLoss>,
    /// Composite-loss decoder weight (phase 2).
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Auxiliary x0-loss weight (phase 2); 0 disables.
    #[arg(long)]
    pub lambda_aux: Option<f64>,
    /// Apply the decode penalty every k-th step (phase 2).
    #[arg(long)]
    pub decode_every: Option<usize>,
    /// Worker threads (0 = min(4, available)).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Args, Debug)]
pub struct StandardizeArgs {
    /// Single input volume (alternative to --manifest).
    #[arg(long, conflicts_with = "manifest")]
    pub input: Option<PathBuf>,
    /// Batch mode: dataset manifest; every pair of --split is processed.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Split to standardize in batch mode.
    #[arg(long, default_value = "eval", value_parser = parse_split)]
    pub split: ctharm_core::phantom::Split,
    #[arg(long)]
    pub phase1: PathBuf,
    #[arg(long)]
    pub phase2: PathBuf,
    /// Output volume path (single mode).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Output directory (batch mode).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// pure-noise | truncated:<t>
    #[arg(long, default_value = "pure-noise", value_parser = parse_start_mode)]
    pub start_mode: ctharm_core::pipeline::StartSpec,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Center-crop inputs whose dims are not divisible by the net scale.
    #[arg(long)]
    pub center_crop: bool,
}

#[derive(Args, Debug)]
pub struct FeaturesArgs {
    #[arg(long)]
    pub volume: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
    /// Sphere ROIs: "x,y,z,r;x,y,z,r;..." (voxel units).
    #[arg(long)]
    pub spheres: Option<String>,
    /// HU-window ROIs: "lo:hi,lo:hi,...". Defaults to the four standard
    /// ranges when no ROI flag is given.
    #[arg(long)]
    pub windows: Option<String>,
    #[arg(long, default_value_t = 32)]
    pub ng: u16,
    #[arg(long, default_value_t = 16)]
    pub nbins: u16,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory holding pair_XXXX_aprime.ltdv volumes.
    #[arg(long)]
    pub standardized_dir: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value = "eval", value_parser = parse_split)]
    pub split: ctharm_core::phantom::Split,
    /// lesions | windows
    #[arg(long, default_value = "lesions")]
    pub roi: String,
    #[arg(long, default_value_t = 2)]
    pub threads: usize,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// CCC CSV files to tabulate (repeatable).
    #[arg(long = "ccc", required = true)]
    pub ccc: Vec<PathBuf>,
    /// Row labels matching --ccc order (defaults to file stems).
    #[arg(long)]
    pub labels: Option<String>,
    /// Optional slice dumps: three volumes (input, standard, standardized).
    #[arg(long, num_args = 3)]
    pub images: Option<Vec<PathBuf>>,
    /// Slice index for --images.
    #[arg(long, default_value_t = 0)]
    pub slice: usize,
    /// PGM path prefix for --images.
    #[arg(long)]
    pub out_pgm: Option<PathBuf>,
}

fn parse_dims(s: &str) -> Result<(usize, usize, usize), String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err("expected NX,NY,NZ".into());
    }
    let p = |i: usize| parts[i].trim().parse::<usize>().map_err(|e| e.to_string());
    Ok((p(0)?, p(1)?, p(2)?))
}

fn parse_arch(s: &str) -> Result<Arch, String> {
    match s {
        "unetpp" => Ok(Arch::UNetPP),
        "unet" => Ok(Arch::UNet),
        _ => Err("expected unetpp or unet".into()),
    }
}

fn parse_recon(s: &str) -> Result<ReconLoss, String> {
    match s {
        "l2" => Ok(ReconLoss::L2),
        "l1" => Ok(ReconLoss::L1),
        _ => Err("expected l2 or l1".into()),
    }
}

fn parse_split(s: &str) -> Result<ctharm_core::phantom::Split, String> {
    match s {
        "train" => Ok(ctharm_core::phantom::Split::Train),
        "eval" => Ok(ctharm_core::phantom::Split::Eval),
        _ => Err("expected train or eval".into()),
    }
}

fn parse_start_mode(s: &str) -> Result<ctharm_core::pipeline::StartSpec, String> {
    use ctharm_core::pipeline::StartSpec;
    if s == "pure-noise" {
        return Ok(StartSpec::PureNoise);
    }
    if let Some(t) = s.strip_prefix("truncated:") {
        let t_start = t.parse::<usize>().map_err(|e| e.to_string())?;
        return Ok(StartSpec::Truncated { t_start });
    }
    Err("expected pure-noise or truncated:<t>".into())
}

/// Applies config file and flag overlays onto the default run config.
pub fn resolve_run_config(args: &TrainArgs) -> Result<RunConfig, String> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
            serde_json::from_str::<RunConfig>(&text)
                .map_err(|e| format!("config {}: {e}", path.display()))?
        }
        None => RunConfig::default(),
    };
    if let Some(v) = &args.manifest {
        cfg.manifest = v.clone();
    }
    if let Some(v) = &args.out_dir {
        cfg.out_dir = v.clone();
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.batch {
        cfg.batch_size = v;
    }
    if let Some(v) = args.lr {
        cfg.lr = v;
    }
    if let Some(v) = args.arch {
        cfg.net.arch = v;
    }
    if let Some(v) = args.recon_loss {
        cfg.net.recon_loss = v;
    }
    if let Some(v) = args.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = args.lambda_aux {
        cfg.lambda_aux = v;
    }
    if let Some(v) = args.decode_every {
        cfg.decode_every = v;
    }
    if let Some(v) = args.threads {
        cfg.threads = v;
    }
    Ok(cfg)
}
