//! Harmonization of CT reconstruction kernels on synthetic phantom data.
//!
//! The crate covers the full desk-scale pipeline:
//!
//! - [`volume`]: HU volumes, the `LTDV` binary format, and ROI masks
//! - [`phantom`]: textured phantom synthesis and smooth/sharp kernel simulation
//! - [`radiomics`]: six-class radiomic feature extraction (GOH, GLCM, GLRLM, ID, IH, NID)
//! - [`metrics`]: concordance correlation coefficient, relative error, group reports
//! - [`nn`]: a small from-scratch tensor/NN stack and the deeply supervised
//!   UNet++ encoder-decoder with a 1D latent bottleneck
//! - [`ddpm`]: conditional denoising diffusion over latent vectors
//! - [`pipeline`]: three-phase training, standardization, and evaluation

pub mod ddpm;
pub mod metrics;
pub mod nn;
pub mod phantom;
pub mod pipeline;
pub mod radiomics;
pub mod volume;
