//! End-to-end standardization of a volume.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::ddpm::{sample, StartMode};
use crate::nn::UNetPP;
use crate::phantom::sub_seed;
use crate::volume::Volume;

use super::train::load_denoiser;
use super::{seeds, slice_to_tensor, tensor_into_slice, PipelineError};

/// How sampling starts per slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartSpec {
    PureNoise,
    /// Forward-diffuse the input latent to `t_start` and reverse from there.
    Truncated { t_start: usize },
}

/// What to do when slice dims are not divisible by the network's scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CropPolicy {
    /// Refuse with an error that names the offending dimension.
    Error,
    /// Center-crop to the largest valid size (output volume shrinks).
    CenterCrop,
}

fn crop_volume(v: &Volume, scale: usize) -> Volume {
    let (nx, ny, nz) = v.dims();
    let cx = (nx / scale) * scale;
    let cy = (ny / scale) * scale;
    let x0 = (nx - cx) / 2;
    let y0 = (ny - cy) / 2;
    let mut vox = Vec::with_capacity(cx * cy * nz);
    for z in 0..nz {
        for y in 0..cy {
            for x in 0..cx {
                vox.push(v.at(x0 + x, y0 + y, z));
            }
        }
    }
    Volume::from_parts((cx, cy, nz), v.spacing_mm(), vox).expect("crop preserves validity")
}

/// Standardizes `vol_a` slice by slice: encode, sample a latent conditioned
/// on the input's latent, decode with the input's skips, reassemble with
/// the input's geometry. Deterministic in `seed`.
pub fn standardize(
    vol_a: &Volume,
    phase1_checkpoint: &Path,
    phase2_checkpoint: &Path,
    start: StartSpec,
    seed: u64,
    crop: CropPolicy,
) -> Result<Volume, PipelineError> {
    let ck = crate::nn::load_checkpoint(phase1_checkpoint)?;
    let net = UNetPP::<f32>::from_checkpoint(&ck)?;
    let (denoiser, schedule, stats) = load_denoiser(phase2_checkpoint)?;
    if denoiser.config().latent_dim != net.config().latent_dim {
        return Err(PipelineError::ConfigMismatch(format!(
            "denoiser latent dim {} vs encoder latent dim {}",
            denoiser.config().latent_dim,
            net.config().latent_dim
        )));
    }

    let scale = net.config().scale();
    let (nx, ny, _) = vol_a.dims();
    let input = if nx % scale == 0 && ny % scale == 0 {
        vol_a.clone()
    } else {
        match crop {
            CropPolicy::Error => {
                let dim = if nx % scale != 0 { nx } else { ny };
                return Err(crate::nn::NnError::Indivisible { dim, factor: scale }.into());
            }
            CropPolicy::CenterCrop => crop_volume(vol_a, scale),
        }
    };

    let (cnx, cny, nz) = input.dims();
    let mut out = Volume::filled((cnx, cny, nz), input.spacing_mm(), 0.0)?;
    for z in 0..nz {
        let x = slice_to_tensor(&input, z);
        let enc = net.encode(&x)?;
        let cond = stats.normalize(&enc.latent);
        let start_mode = match start {
            StartSpec::PureNoise => StartMode::PureNoise,
            StartSpec::Truncated { t_start } => StartMode::TruncatedFrom {
                z: cond.clone(),
                t_start,
            },
        };
        let mut rng =
            ChaCha8Rng::seed_from_u64(sub_seed(sub_seed(seed, seeds::SAMPLING), z as u64));
        let z_std = sample(&cond, &denoiser, &schedule, &start_mode, &mut rng)?;
        let latent = stats.denormalize(&z_std);
        let slice = net.decode(&latent, &enc)?;
        tensor_into_slice(&slice, &mut out, z);
    }
    Ok(out)
}
