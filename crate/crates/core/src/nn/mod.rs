//! Minimal tensor/NN stack with reverse-mode gradients.
//!
//! Layers are lightweight descriptors over a flat [`ParamStore`]; forward
//! passes cache activations and backward passes accumulate gradients into a
//! caller-supplied flat buffer, which keeps batch parallelism and optimizer
//! code trivial. The generic scalar type lets the same code run training in
//! `f32` and finite-difference verification in `f64`.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod params;
pub mod tensor;
pub mod unetpp;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, NamedTensor};
pub use gradcheck::{check_coords, GradBlockReport, GradReport};
pub use layers::{Conv2d, Dense};
pub use loss::deep_supervision_loss;
pub use params::{ParamRef, ParamStore};
pub use tensor::Tensor;
pub use unetpp::{DecodeCache, EncodeCache, UNetPP};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("spatial dim {dim} not divisible by {factor}; center-crop or pad the input")]
    Indivisible { dim: usize, factor: usize },
    #[error("{weights} supervision weights for {heads} heads")]
    WeightHeadMismatch { weights: usize, heads: usize },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("bad checkpoint magic: {0:?}")]
    CkptBadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0} (expected 1)")]
    CkptVersionMismatch(u16),
    #[error("checkpoint missing tensor {0}")]
    MissingTensor(String),
    #[error("checkpoint tensor {name}: expected shape {expected:?}, got {got:?}")]
    TensorShape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("checkpoint/config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("checkpoint config parse: {0}")]
    ConfigParse(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Scalar type of the NN stack: `f32` for training, `f64` for checking.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + Default
    + Send
    + Sync
    + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Shorthand for converting literals into the generic scalar.
#[inline]
pub fn real<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("literal conversion")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    #[serde(rename = "unetpp")]
    UNetPP,
    #[serde(rename = "unet")]
    UNet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReconLoss {
    L2,
    L1,
}

/// Encoder-decoder configuration.
///
/// `depth` is the number of resolution levels; level `i` has
/// `base_channels * 2^i` channels. `supervision_weights` has one entry per
/// decoder column (depth - 1); the plain-UNet ablation emits a single head
/// and uses only the last weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub depth: usize,
    pub base_channels: usize,
    pub latent_dim: usize,
    pub arch: Arch,
    pub recon_loss: ReconLoss,
    pub supervision_weights: Vec<f64>,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            depth: 4,
            base_channels: 16,
            latent_dim: 128,
            arch: Arch::UNetPP,
            recon_loss: ReconLoss::L2,
            supervision_weights: vec![1.0; 3],
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.depth < 2 {
            return Err(NnError::BadConfig(format!("depth {} < 2", self.depth)));
        }
        if self.base_channels == 0 {
            return Err(NnError::BadConfig("base_channels must be >= 1".into()));
        }
        if self.latent_dim == 0 {
            return Err(NnError::BadConfig("latent_dim must be >= 1".into()));
        }
        if self.supervision_weights.len() != self.depth - 1 {
            return Err(NnError::BadConfig(format!(
                "need {} supervision weights, got {}",
                self.depth - 1,
                self.supervision_weights.len()
            )));
        }
        if self.supervision_weights.iter().any(|&w| w < 0.0) {
            return Err(NnError::BadConfig("supervision weights must be >= 0".into()));
        }
        if self.supervision_weights.iter().sum::<f64>() <= 0.0 {
            return Err(NnError::BadConfig("supervision weights must sum > 0".into()));
        }
        Ok(())
    }

    /// Channel count at level `i`.
    pub fn channels(&self, i: usize) -> usize {
        self.base_channels << i
    }

    /// Spatial downscale factor of the deepest level.
    pub fn scale(&self) -> usize {
        1 << (self.depth - 1)
    }
}
