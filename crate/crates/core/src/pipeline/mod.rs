//! Three-phase training and end-to-end standardization.
//!
//! Phase 1 trains the encoder-decoder as an autoencoder on every training
//! slice, standard and non-standard pooled. Phase 2 freezes it, encodes all
//! pairs, and trains the conditional latent denoiser (optionally with an
//! x0 / decode penalty that pushes decoded estimates toward the standard
//! image). Phase 3 is composition: encode, sample a standardized latent
//! conditioned on the input's latent, decode with the input's skips.
//!
//! Slices enter the network normalized by the fixed HU window
//! [-1000, 400]; latents are standardized per dimension (statistics stored
//! in the phase-2 checkpoint) so the diffusion prior matches.
//!
//! Seed discipline: the master seed fans out into named substreams
//! (init, batching, diffusion init/batching, sampling) so that every
//! artifact is reproducible bit-for-bit, including under batch
//! parallelism (per-item gradients reduce in batch order).

mod evaluate;
mod standardize;
mod train;

pub use evaluate::{evaluate, EvaluateOutput, RelErrRow, RoiPolicy};
pub use standardize::{standardize, CropPolicy, StartSpec};
pub use train::{train_phase1, train_phase2, LossCurve, Phase1Output, Phase2Output};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ddpm::DdpmError;
use crate::metrics::MetricsError;
use crate::nn::{NetConfig, NnError, Tensor, UNetPP};
use crate::phantom::PhantomError;
use crate::radiomics::RadiomicsError;
use crate::volume::{Volume, VolumeError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("dataset has no usable pairs")]
    EmptyDataset,
    #[error("non-finite loss in {phase} at epoch {epoch}")]
    NonFiniteLoss { phase: &'static str, epoch: usize },
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("missing volume: {0}")]
    MissingVolume(String),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Phantom(#[from] PhantomError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Ddpm(#[from] DdpmError),
    #[error(transparent)]
    Radiomics(#[from] RadiomicsError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// HU window used to normalize slices for the network (and for PSNR/PGM).
pub const HU_WINDOW: (f32, f32) = (-1000.0, 400.0);

pub fn hu_to_unit(hu: f32) -> f32 {
    (hu - HU_WINDOW.0) / (HU_WINDOW.1 - HU_WINDOW.0)
}

pub fn unit_to_hu(x: f32) -> f32 {
    x * (HU_WINDOW.1 - HU_WINDOW.0) + HU_WINDOW.0
}

/// One z-slice as a normalized [1, ny, nx] tensor.
pub fn slice_to_tensor(v: &Volume, z: usize) -> Tensor<f32> {
    let (nx, ny, _) = v.dims();
    let data = v.slice(z).iter().map(|&hu| hu_to_unit(hu)).collect();
    Tensor::from_vec(&[1, ny, nx], data).expect("slice shape")
}

/// Writes a normalized [1, ny, nx] tensor back into slice `z` of `v`.
pub fn tensor_into_slice(t: &Tensor<f32>, v: &mut Volume, z: usize) {
    let (nx, ny, _) = v.dims();
    debug_assert_eq!(t.shape(), &[1, ny, nx]);
    for y in 0..ny {
        for x in 0..nx {
            v.set(x, y, z, unit_to_hu(t.data()[y * nx + x]));
        }
    }
}

/// Schedule hyperparameters as carried by configs and checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub t_steps: usize,
    pub beta_first: f64,
    pub beta_last: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            t_steps: 200,
            beta_first: 1e-4,
            beta_last: 0.02,
        }
    }
}

/// Full run configuration (serialized into run manifests).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub out_dir: PathBuf,
    pub net: NetConfig,
    pub denoiser_hidden: Vec<usize>,
    pub t_embed_dim: usize,
    pub schedule: ScheduleConfig,
    pub epochs_phase1: usize,
    pub epochs_phase2: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lr: f64,
    pub lambda: f64,
    pub lambda_aux: f64,
    /// Apply the decode penalty on every k-th phase-2 step (1 = always).
    pub decode_every: usize,
    /// Worker threads (0 = min(4, available)).
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest: PathBuf::from("data/manifest.json"),
            out_dir: PathBuf::from("out"),
            net: NetConfig::default(),
            denoiser_hidden: vec![256, 256, 256],
            t_embed_dim: 64,
            schedule: ScheduleConfig::default(),
            epochs_phase1: 40,
            epochs_phase2: 60,
            batch_size: 8,
            seed: 7,
            lr: 1e-4,
            lambda: 0.1,
            lambda_aux: 1.0,
            decode_every: 1,
            threads: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.epochs_phase1 == 0 || self.epochs_phase2 == 0 {
            return Err(PipelineError::ConfigMismatch("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(PipelineError::ConfigMismatch("batch size must be >= 1".into()));
        }
        if self.decode_every == 0 {
            return Err(PipelineError::ConfigMismatch("decode_every must be >= 1".into()));
        }
        self.net.validate()?;
        Ok(())
    }

    pub fn effective_threads(&self) -> usize {
        if self.threads > 0 {
            self.threads
        } else {
            std::thread::available_parallelism()
                .map(|n| n.get().min(4))
                .unwrap_or(1)
        }
    }

    pub fn thread_pool(&self) -> rayon::ThreadPool {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.effective_threads())
            .build()
            .expect("thread pool")
    }
}

/// Named RNG substreams derived from the master seed.
pub mod seeds {
    pub const NET_INIT: u64 = 1;
    pub const BATCHING: u64 = 2;
    pub const DIFF_INIT: u64 = 3;
    pub const DIFF_BATCHING: u64 = 4;
    pub const SAMPLING: u64 = 5;
}

/// Echo of a completed run: config, seeds, artifact paths (relative to the
/// manifest's directory).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    pub config: RunConfig,
    pub artifacts: Vec<(String, String)>,
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Mean reconstruction PSNR (dB) of the final head over all slices of the
/// given volumes, with the peak level set by the HU window width.
pub fn reconstruction_psnr(
    net: &UNetPP<f32>,
    vols: &[&Volume],
) -> Result<f64, PipelineError> {
    let mut se = 0.0f64;
    let mut n = 0usize;
    for v in vols {
        let (_, _, nz) = v.dims();
        for z in 0..nz {
            let x = slice_to_tensor(v, z);
            let (_, dec) = net.forward(&x)?;
            let head = dec.head(net.config().depth - 1).expect("final head");
            for (o, t) in head.data().iter().zip(x.data()) {
                let d = (unit_to_hu(*o) - unit_to_hu(*t)) as f64;
                se += d * d;
                n += 1;
            }
        }
    }
    let mse = se / n as f64;
    let peak = (HU_WINDOW.1 - HU_WINDOW.0) as f64;
    Ok(10.0 * (peak * peak / mse).log10())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hu_window_round_trip() {
        for hu in [-1000.0f32, -800.0, 0.0, 400.0, 55.5] {
            let back = unit_to_hu(hu_to_unit(hu));
            assert!((back - hu).abs() < 1e-3);
        }
        assert_eq!(hu_to_unit(-1000.0), 0.0);
        assert_eq!(hu_to_unit(400.0), 1.0);
    }

    #[test]
    fn slice_tensor_round_trip() {
        let mut v = Volume::filled((4, 3, 2), (1.0, 1.0, 1.0), -800.0).unwrap();
        v.set(1, 2, 1, 40.0);
        let t = slice_to_tensor(&v, 1);
        assert_eq!(t.shape(), &[1, 3, 4]);
        let mut out = Volume::filled((4, 3, 2), (1.0, 1.0, 1.0), 0.0).unwrap();
        tensor_into_slice(&t, &mut out, 1);
        assert!((out.at(1, 2, 1) - 40.0).abs() < 1e-3);
        assert!((out.at(0, 0, 1) - -800.0).abs() < 1e-3);
    }

    #[test]
    fn run_config_validation() {
        let mut cfg = RunConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.batch_size = 0;
        assert!(cfg.validate().is_err());
    }
}
