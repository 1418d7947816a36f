//! Phase-1 (encoder-decoder) and phase-2 (latent denoiser) training.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ddpm::{
    make_schedule, train_step, Denoiser, DenoiserConfig, DecodePenalty, DiffusionLossCfg,
    NoiseSchedule,
};
use crate::nn::{
    adam_step, deep_supervision_loss, save_checkpoint, AdamHyper, AdamState, Checkpoint,
    EncodeCache, NamedTensor, Tensor, UNetPP,
};
use crate::phantom::{sub_seed, DatasetManifest, Split};
use crate::volume::load_volume;

use super::{seeds, slice_to_tensor, PipelineError, RunConfig, ScheduleConfig};

/// Per-epoch mean training loss.
#[derive(Debug, Clone, Default)]
pub struct LossCurve {
    pub per_epoch: Vec<f64>,
}

impl LossCurve {
    pub fn write_csv(&self, path: &Path) -> Result<(), PipelineError> {
        let mut out = String::from("epoch,loss\n");
        for (i, l) in self.per_epoch.iter().enumerate() {
            out.push_str(&format!("{i},{l:.8e}\n"));
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Mean of the curve over `[i - 4, i]`, defined from index 4 on.
    pub fn smoothed(&self) -> Vec<f64> {
        if self.per_epoch.len() < 5 {
            return self.per_epoch.clone();
        }
        (4..self.per_epoch.len())
            .map(|i| self.per_epoch[i - 4..=i].iter().sum::<f64>() / 5.0)
            .collect()
    }
}

/// Loads the normalized training slices (A and B pooled) of one split.
fn load_split_slices(
    manifest_path: &Path,
    split: Split,
) -> Result<Vec<Tensor<f32>>, PipelineError> {
    let manifest = DatasetManifest::load(manifest_path)?;
    let mut slices = Vec::new();
    for pair in manifest.pairs.iter().filter(|p| p.split == split) {
        let (a_path, b_path) = manifest.resolve(manifest_path, pair);
        for path in [a_path, b_path] {
            let v = load_volume(&path).map_err(|e| match e {
                crate::volume::VolumeError::Io(_) => {
                    PipelineError::MissingVolume(path.display().to_string())
                }
                other => PipelineError::Volume(other),
            })?;
            for z in 0..v.dims().2 {
                slices.push(slice_to_tensor(&v, z));
            }
        }
    }
    if slices.is_empty() {
        return Err(PipelineError::EmptyDataset);
    }
    Ok(slices)
}

#[derive(Debug)]
pub struct Phase1Output {
    pub checkpoint_path: PathBuf,
    pub loss_curve_path: PathBuf,
    pub curve: LossCurve,
}

/// Autoencoder training over all training slices (target = input) with the
/// deep-supervision loss. Deterministic in the master seed, including
/// under batch parallelism.
pub fn train_phase1(cfg: &RunConfig) -> Result<Phase1Output, PipelineError> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let slices = load_split_slices(&cfg.manifest, Split::Train)?;
    let net = UNetPP::<f32>::new(cfg.net.clone(), sub_seed(cfg.seed, seeds::NET_INIT))?;
    let pool = cfg.thread_pool();
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, seeds::BATCHING));
    let weights = net.head_weights();
    let recon = cfg.net.recon_loss;
    let hyper = AdamHyper::with_lr(cfg.lr);

    let mut net = net;
    let mut adam = AdamState::new(net.params().len_scalars());
    let mut curve = LossCurve::default();
    let mut indices: Vec<usize> = (0..slices.len()).collect();
    for epoch in 0..cfg.epochs_phase1 {
        indices.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        for batch in indices.chunks(cfg.batch_size) {
            let results: Vec<(f64, Vec<f32>)> = pool.install(|| {
                batch
                    .par_iter()
                    .map(|&idx| {
                        let x = &slices[idx];
                        let (enc, dec) = net.forward(x).expect("training slice shape");
                        let (loss, hgrads) =
                            deep_supervision_loss(&dec.head_tensors(), x, &weights, recon)
                                .expect("head/weight counts match");
                        let mut g = net.params().zero_grad();
                        let pairs: Vec<(usize, Tensor<f32>)> =
                            dec.heads.iter().map(|(j, _)| *j).zip(hgrads).collect();
                        net.backward(&enc, &dec, &pairs, &mut g);
                        (loss as f64, g)
                    })
                    .collect()
            });
            // Deterministic reduction in batch order.
            let mut grad = net.params().zero_grad();
            let inv = 1.0 / batch.len() as f32;
            for (loss, g) in &results {
                epoch_loss += *loss;
                for (acc, x) in grad.iter_mut().zip(g) {
                    *acc += *x * inv;
                }
            }
            adam_step(net.params_mut().data_mut(), &grad, &mut adam, &hyper)?;
        }
        let mean = epoch_loss / slices.len() as f64;
        if !mean.is_finite() {
            return Err(PipelineError::NonFiniteLoss {
                phase: "phase1",
                epoch,
            });
        }
        println!("phase1 epoch {epoch}: loss {mean:.6e}");
        curve.per_epoch.push(mean);
    }

    let checkpoint_path = cfg.out_dir.join("phase1.ltck");
    save_checkpoint(&net.to_checkpoint(), &checkpoint_path)?;
    let loss_curve_path = cfg.out_dir.join("phase1_loss.csv");
    curve.write_csv(&loss_curve_path)?;
    Ok(Phase1Output {
        checkpoint_path,
        loss_curve_path,
        curve,
    })
}

/// Checkpoint payload of phase 2 (denoiser + schedule + latent statistics).
#[derive(Debug, Serialize, Deserialize)]
pub struct DenoiserCheckpointConfig {
    pub kind: String,
    pub denoiser: DenoiserConfig,
    pub schedule: ScheduleConfig,
    pub lambda: f64,
    pub lambda_aux: f64,
}

#[derive(Debug)]
pub struct Phase2Output {
    pub checkpoint_path: PathBuf,
    pub loss_curve_path: PathBuf,
    pub curve: LossCurve,
}

/// Per-dimension latent statistics for diffusion-space standardization.
#[derive(Debug, Clone)]
pub struct LatentStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl LatentStats {
    pub fn fit(latents: &[&[f32]]) -> Self {
        let dim = latents[0].len();
        let n = latents.len() as f64;
        let mut mean = vec![0.0f64; dim];
        for l in latents {
            for (m, &x) in mean.iter_mut().zip(*l) {
                *m += x as f64;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0f64; dim];
        for l in latents {
            for ((v, &x), m) in var.iter_mut().zip(*l).zip(&mean) {
                let d = x as f64 - m;
                *v += d * d;
            }
        }
        let std = var
            .iter()
            .map(|v| ((v / n).sqrt() as f32).max(1e-6))
            .collect();
        Self {
            mean: mean.iter().map(|&m| m as f32).collect(),
            std,
        }
    }

    pub fn normalize(&self, z: &[f32]) -> Vec<f32> {
        z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&x, (&m, &s))| (x - m) / s)
            .collect()
    }

    pub fn denormalize(&self, z: &[f32]) -> Vec<f32> {
        z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&x, (&m, &s))| x * s + m)
            .collect()
    }
}

/// Decode penalty `‖D(ẑ0) - B‖²` on the normalized x0 estimate, with the
/// gradient mapped back through the latent statistics.
struct SlicePenalty<'a> {
    net: &'a UNetPP<f32>,
    enc: &'a EncodeCache<f32>,
    target: &'a Tensor<f32>,
    stats: &'a LatentStats,
}

impl DecodePenalty<f32> for SlicePenalty<'_> {
    fn loss_and_grad(&mut self, z0_hat: &[f32]) -> (f32, Vec<f32>) {
        let latent = self.stats.denormalize(z0_hat);
        let dec = self
            .net
            .decode_columns(&latent, self.enc, self.net.config().depth - 1)
            .expect("compatible caches");
        let out = dec.head(self.net.config().depth - 1).expect("final head");
        let mut loss = 0.0f32;
        let mut ghead = Tensor::zeros(out.shape());
        for ((g, &o), &t) in ghead
            .data_mut()
            .iter_mut()
            .zip(out.data())
            .zip(self.target.data())
        {
            let d = o - t;
            loss += d * d;
            *g = 2.0 * d;
        }
        let glatent = self.net.decode_backward_latent(&dec, &ghead);
        let gnorm = glatent
            .iter()
            .zip(&self.stats.std)
            .map(|(&g, &s)| g * s)
            .collect();
        (loss, gnorm)
    }
}

/// Encoded training pair: condition latent, target latent, and the cached
/// skips + normalized target slice for the decode penalty.
struct EncodedPair {
    za: Vec<f32>,
    zb: Vec<f32>,
    enc_a: EncodeCache<f32>,
    b_slice: Tensor<f32>,
}

/// Trains the conditional denoiser on frozen-encoder latents.
pub fn train_phase2(
    cfg: &RunConfig,
    phase1_checkpoint: &Path,
) -> Result<Phase2Output, PipelineError> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let ck = crate::nn::load_checkpoint(phase1_checkpoint)?;
    let net = UNetPP::<f32>::from_checkpoint(&ck)?;
    if *net.config() != cfg.net {
        return Err(PipelineError::ConfigMismatch(
            "run config net differs from the phase-1 checkpoint".into(),
        ));
    }

    // Encode all training pairs once with the frozen encoder.
    let manifest = DatasetManifest::load(&cfg.manifest)?;
    let pool = cfg.thread_pool();
    let mut pairs: Vec<EncodedPair> = Vec::new();
    for pair in manifest.pairs.iter().filter(|p| p.split == Split::Train) {
        let (a_path, b_path) = manifest.resolve(&cfg.manifest, pair);
        let va = load_volume(&a_path)?;
        let vb = load_volume(&b_path)?;
        let nz = va.dims().2;
        let per_slice: Vec<EncodedPair> = pool.install(|| {
            (0..nz)
                .into_par_iter()
                .map(|z| {
                    let xa = slice_to_tensor(&va, z);
                    let xb = slice_to_tensor(&vb, z);
                    let enc_a = net.encode(&xa).expect("dataset slice shape");
                    let enc_b = net.encode(&xb).expect("dataset slice shape");
                    EncodedPair {
                        za: enc_a.latent.clone(),
                        zb: enc_b.latent,
                        enc_a,
                        b_slice: xb,
                    }
                })
                .collect()
        });
        pairs.extend(per_slice);
    }
    if pairs.is_empty() {
        return Err(PipelineError::EmptyDataset);
    }

    let all_latents: Vec<&[f32]> = pairs
        .iter()
        .flat_map(|p| [p.za.as_slice(), p.zb.as_slice()])
        .collect();
    let stats = LatentStats::fit(&all_latents);

    let denoiser_cfg = DenoiserConfig {
        latent_dim: cfg.net.latent_dim,
        hidden: cfg.denoiser_hidden.clone(),
        t_embed_dim: cfg.t_embed_dim,
    };
    let mut denoiser =
        Denoiser::<f32>::new(denoiser_cfg.clone(), sub_seed(cfg.seed, seeds::DIFF_INIT))?;
    let schedule: NoiseSchedule<f32> = make_schedule(
        cfg.schedule.t_steps,
        cfg.schedule.beta_first,
        cfg.schedule.beta_last,
    )?;
    let loss_cfg = DiffusionLossCfg {
        lambda_aux: cfg.lambda_aux,
        lambda: cfg.lambda,
    };
    let hyper = AdamHyper::with_lr(cfg.lr);
    let mut adam = AdamState::new(denoiser.params().len_scalars());
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, seeds::DIFF_BATCHING));
    let mut curve = LossCurve::default();
    let mut indices: Vec<usize> = (0..pairs.len()).collect();
    let mut step_counter = 0usize;
    for epoch in 0..cfg.epochs_phase2 {
        indices.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        for batch in indices.chunks(cfg.batch_size) {
            // Item-level rng streams drawn up-front keep parallel and
            // serial execution identical.
            let item_seeds: Vec<u64> = batch.iter().map(|_| rng.random()).collect();
            let with_decode = loss_cfg.lambda_aux > 0.0
                && loss_cfg.lambda > 0.0
                && step_counter % cfg.decode_every == 0;
            step_counter += 1;
            let results: Vec<(f64, Vec<f32>)> = pool.install(|| {
                batch
                    .par_iter()
                    .zip(&item_seeds)
                    .map(|(&idx, &item_seed)| {
                        let p = &pairs[idx];
                        let za = stats.normalize(&p.za);
                        let zb = stats.normalize(&p.zb);
                        let mut g = denoiser.params().zero_grad();
                        let mut item_rng = ChaCha8Rng::seed_from_u64(item_seed);
                        let mut penalty = SlicePenalty {
                            net: &net,
                            enc: &p.enc_a,
                            target: &p.b_slice,
                            stats: &stats,
                        };
                        let decode_arg: Option<&mut dyn DecodePenalty<f32>> = if with_decode {
                            Some(&mut penalty)
                        } else {
                            None
                        };
                        let loss = train_step(
                            &denoiser,
                            &za,
                            &zb,
                            &schedule,
                            &mut item_rng,
                            &loss_cfg,
                            decode_arg,
                            &mut g,
                        )
                        .expect("latent dims agree");
                        (loss as f64, g)
                    })
                    .collect()
            });
            let mut grad = denoiser.params().zero_grad();
            let inv = 1.0 / batch.len() as f32;
            for (loss, g) in &results {
                epoch_loss += *loss;
                for (acc, x) in grad.iter_mut().zip(g) {
                    *acc += *x * inv;
                }
            }
            adam_step(denoiser.params_mut().data_mut(), &grad, &mut adam, &hyper)?;
        }
        let mean = epoch_loss / pairs.len() as f64;
        if !mean.is_finite() {
            return Err(PipelineError::NonFiniteLoss {
                phase: "phase2",
                epoch,
            });
        }
        println!("phase2 epoch {epoch}: loss {mean:.6e}");
        curve.per_epoch.push(mean);
    }

    let ck_cfg = DenoiserCheckpointConfig {
        kind: "denoiser".to_string(),
        denoiser: denoiser_cfg,
        schedule: cfg.schedule,
        lambda: cfg.lambda,
        lambda_aux: cfg.lambda_aux,
    };
    let data = denoiser.params().to_f32();
    let mut tensors: Vec<NamedTensor> = denoiser
        .params()
        .entries()
        .iter()
        .map(|e| NamedTensor {
            name: e.name.clone(),
            shape: e.shape.clone(),
            data: data[e.range()].to_vec(),
        })
        .collect();
    tensors.push(NamedTensor {
        name: "latent_mean".into(),
        shape: vec![stats.mean.len()],
        data: stats.mean.clone(),
    });
    tensors.push(NamedTensor {
        name: "latent_std".into(),
        shape: vec![stats.std.len()],
        data: stats.std.clone(),
    });
    let checkpoint = Checkpoint {
        config_json: serde_json::to_string(&ck_cfg)?,
        tensors,
    };
    let checkpoint_path = cfg.out_dir.join("phase2.ltck");
    save_checkpoint(&checkpoint, &checkpoint_path)?;
    let loss_curve_path = cfg.out_dir.join("phase2_loss.csv");
    curve.write_csv(&loss_curve_path)?;
    Ok(Phase2Output {
        checkpoint_path,
        loss_curve_path,
        curve,
    })
}

/// Rebuilds the denoiser + schedule + latent stats from a phase-2
/// checkpoint.
pub fn load_denoiser(
    path: &Path,
) -> Result<(Denoiser<f32>, NoiseSchedule<f32>, LatentStats), PipelineError> {
    let ck = crate::nn::load_checkpoint(path)?;
    let cfg: DenoiserCheckpointConfig = serde_json::from_str(&ck.config_json)?;
    if cfg.kind != "denoiser" {
        return Err(PipelineError::ConfigMismatch(format!(
            "checkpoint kind {:?} is not denoiser",
            cfg.kind
        )));
    }
    let mut denoiser = Denoiser::<f32>::new(cfg.denoiser, 0)?;
    for e in denoiser.params().entries().to_vec() {
        let t = ck
            .tensor(&e.name)
            .ok_or_else(|| crate::nn::NnError::MissingTensor(e.name.clone()))?;
        if t.shape != e.shape {
            return Err(crate::nn::NnError::TensorShape {
                name: e.name.clone(),
                expected: e.shape.clone(),
                got: t.shape.clone(),
            }
            .into());
        }
        denoiser.params_mut().data_mut()[e.range()].copy_from_slice(&t.data);
    }
    let mean = ck
        .tensor("latent_mean")
        .ok_or_else(|| crate::nn::NnError::MissingTensor("latent_mean".into()))?
        .data
        .clone();
    let std = ck
        .tensor("latent_std")
        .ok_or_else(|| crate::nn::NnError::MissingTensor("latent_std".into()))?
        .data
        .clone();
    let schedule = make_schedule(
        cfg.schedule.t_steps,
        cfg.schedule.beta_first,
        cfg.schedule.beta_last,
    )?;
    Ok((denoiser, schedule, LatentStats { mean, std }))
}
