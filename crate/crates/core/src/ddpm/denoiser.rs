//! Conditional noise-prediction network over latent vectors.
//!
//! A dense MLP taking `[z_t, t-embedding, condition]`, leaky-rectified
//! hidden layers, linear output of `latent_dim`. The time embedding is the
//! usual sinusoidal pairing `sin(t * w_i), cos(t * w_i)` with
//! `w_i = 10000^(-2i/d)`.

use serde::{Deserialize, Serialize};

use crate::nn::{real, Dense, NnError, ParamStore, Real};

use super::NoisePredictor;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub t_embed_dim: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            latent_dim: 128,
            hidden: vec![256, 256, 256],
            t_embed_dim: 64,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.latent_dim == 0 {
            return Err(NnError::BadConfig("latent_dim must be >= 1".into()));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(NnError::BadConfig("hidden sizes must be >= 1".into()));
        }
        if self.t_embed_dim == 0 || self.t_embed_dim % 2 != 0 {
            return Err(NnError::BadConfig("t_embed_dim must be positive and even".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        2 * self.latent_dim + self.t_embed_dim
    }
}

/// Sinusoidal embedding of an integer timestep.
pub fn time_embedding<T: Real>(t: usize, dim: usize) -> Vec<T> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for i in 0..half {
        let freq = (10000.0f64).powf(-2.0 * i as f64 / dim as f64);
        let ang = t as f64 * freq;
        out.push(real(ang.sin()));
        out.push(real(ang.cos()));
    }
    out
}

#[derive(Debug, Clone)]
pub struct Denoiser<T> {
    cfg: DenoiserConfig,
    ps: ParamStore<T>,
    layers: Vec<Dense>,
}

/// Per-layer activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct DenoiserCache<T> {
    /// Input to each layer (index 0 is the concatenated network input).
    inputs: Vec<Vec<T>>,
    /// Post-activation output of each hidden layer.
    hidden_out: Vec<Vec<T>>,
}

impl<T: Real> Denoiser<T> {
    pub fn new(cfg: DenoiserConfig, seed: u64) -> Result<Self, NnError> {
        cfg.validate()?;
        let mut ps = ParamStore::new();
        let mut layers = Vec::new();
        let mut n_in = cfg.input_dim();
        for (k, &h) in cfg.hidden.iter().enumerate() {
            layers.push(Dense::new(&mut ps, &format!("dense_{k}"), n_in, h));
            n_in = h;
        }
        layers.push(Dense::new(
            &mut ps,
            &format!("dense_{}", cfg.hidden.len()),
            n_in,
            cfg.latent_dim,
        ));
        let mut rng = ParamStore::<T>::init_rng(seed);
        let inits: Vec<_> = layers.iter().map(|l| (l.w, l.n_in)).collect();
        for (w, fan_in) in inits {
            ps.init_kaiming(w, fan_in, &mut rng);
        }
        Ok(Self { cfg, ps, layers })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.ps
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.ps
    }

    fn leaky(v: &mut [T]) {
        let slope: T = real(crate::nn::layers::LEAKY_SLOPE);
        for x in v.iter_mut() {
            if *x < T::zero() {
                *x = *x * slope;
            }
        }
    }

    fn leaky_grad(g: &mut [T], out: &[T]) {
        let slope: T = real(crate::nn::layers::LEAKY_SLOPE);
        for (gi, &o) in g.iter_mut().zip(out) {
            if o < T::zero() {
                *gi = *gi * slope;
            }
        }
    }

    pub fn forward(&self, z_t: &[T], t: usize, cond: &[T]) -> (Vec<T>, DenoiserCache<T>) {
        debug_assert_eq!(z_t.len(), self.cfg.latent_dim);
        debug_assert_eq!(cond.len(), self.cfg.latent_dim);
        let mut input = Vec::with_capacity(self.cfg.input_dim());
        input.extend_from_slice(z_t);
        input.extend(time_embedding::<T>(t, self.cfg.t_embed_dim));
        input.extend_from_slice(cond);
        let mut cache = DenoiserCache {
            inputs: Vec::with_capacity(self.layers.len()),
            hidden_out: Vec::with_capacity(self.layers.len() - 1),
        };
        let mut cur = input;
        for (k, layer) in self.layers.iter().enumerate() {
            cache.inputs.push(cur.clone());
            let mut out = layer.forward(&self.ps, &cur);
            if k + 1 < self.layers.len() {
                Self::leaky(&mut out);
                cache.hidden_out.push(out.clone());
            }
            cur = out;
        }
        (cur, cache)
    }

    /// Accumulates parameter gradients for an output gradient `gout`.
    pub fn backward(&self, cache: &DenoiserCache<T>, gout: &[T], gparams: &mut [T]) {
        let mut g = gout.to_vec();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            g = layer.backward(&self.ps, &cache.inputs[k], &g, gparams);
            if k > 0 {
                Self::leaky_grad(&mut g, &cache.hidden_out[k - 1]);
            }
        }
    }
}

impl<T: Real> NoisePredictor<T> for Denoiser<T> {
    fn predict(&self, z_t: &[T], t: usize, cond: &[T]) -> Vec<T> {
        self.forward(z_t, t, cond).0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::check_coords;
    use rand::Rng;

    fn tiny() -> Denoiser<f64> {
        Denoiser::new(
            DenoiserConfig {
                latent_dim: 3,
                hidden: vec![8, 8],
                t_embed_dim: 4,
            },
            7,
        )
        .unwrap()
    }

    #[test]
    fn output_dim_is_latent_dim() {
        let d = tiny();
        let (out, _) = d.forward(&[0.1, -0.2, 0.3], 5, &[0.0, 1.0, 0.5]);
        assert_eq!(out.len(), 3);
    }

    #[test]
    fn time_embedding_alternates_sin_cos() {
        let e: Vec<f64> = time_embedding(0, 6);
        assert_eq!(e, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let e1: Vec<f64> = time_embedding(3, 4);
        assert!((e1[0] - (3.0f64).sin()).abs() < 1e-12);
        assert!((e1[1] - (3.0f64).cos()).abs() < 1e-12);
    }

    #[test]
    fn distinct_timesteps_change_output() {
        let d = tiny();
        let z = [0.5, 0.5, 0.5];
        let c = [0.0, 0.0, 0.0];
        let (a, _) = d.forward(&z, 1, &c);
        let (b, _) = d.forward(&z, 100, &c);
        assert_ne!(a, b);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let d = tiny();
        let z = [0.3, -0.1, 0.7];
        let c = [0.2, 0.0, -0.5];
        let target = [0.5, 0.5, -0.5];
        let loss_of = |den: &Denoiser<f64>| {
            let (out, _) = den.forward(&z, 4, &c);
            out.iter()
                .zip(&target)
                .map(|(o, t)| (o - t) * (o - t))
                .sum::<f64>()
        };
        let (out, cache) = d.forward(&z, 4, &c);
        let gout: Vec<f64> = out.iter().zip(&target).map(|(o, t)| 2.0 * (o - t)).collect();
        let mut grad = d.params().zero_grad();
        d.backward(&cache, &gout, &mut grad);

        let mut rng = ParamStore::<f64>::init_rng(3);
        let n = d.params().len_scalars();
        let idxs: Vec<usize> = (0..40).map(|_| rng.random_range(0..n)).collect();
        let mut theta: Vec<f64> = d.params().data().to_vec();
        let worst = check_coords(
            &mut theta,
            &grad,
            |p| {
                let mut dn = d.clone();
                dn.params_mut().data_mut().copy_from_slice(p);
                loss_of(&dn)
            },
            &idxs,
            1e-6,
        );
        assert!(worst < 1e-3, "denoiser grad err {worst}");
    }
}
