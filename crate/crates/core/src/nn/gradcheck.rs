//! Central finite-difference verification of analytic gradients.
//!
//! Runs in `f64`. Coordinates are sampled per parameter block (all of them
//! for small blocks), and the report carries the max relative error per
//! block with `rel = |fd - g| / max(|fd| + |g|, 1e-6)`.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::ParamStore;

#[derive(Debug, Clone)]
pub struct GradBlockReport {
    pub name: String,
    pub max_rel_err: f64,
    pub checked: usize,
}

#[derive(Debug, Clone, Default)]
pub struct GradReport {
    pub blocks: Vec<GradBlockReport>,
}

impl GradReport {
    pub fn max_rel_err(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.max_rel_err)
            .fold(0.0, f64::max)
    }
}

fn rel_err(fd: f64, g: f64) -> f64 {
    (fd - g).abs() / (fd.abs() + g.abs()).max(1e-6)
}

/// Checks `analytic[i]` against a central difference of `loss` at the given
/// coordinates of `theta`; returns the max relative error.
pub fn check_coords<F>(
    theta: &mut [f64],
    analytic: &[f64],
    mut loss: F,
    idxs: &[usize],
    h: f64,
) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let mut worst = 0.0f64;
    for &i in idxs {
        let orig = theta[i];
        let step = h * orig.abs().max(1.0);
        theta[i] = orig + step;
        let lp = loss(theta);
        theta[i] = orig - step;
        let lm = loss(theta);
        theta[i] = orig;
        let fd = (lp - lm) / (2.0 * step);
        worst = worst.max(rel_err(fd, analytic[i]));
    }
    worst
}

/// Verifies every parameter block of a network in `f64`.
///
/// `loss_and_grad` evaluates the scalar loss and the full flat gradient for
/// the store's current parameters; `loss_only` re-evaluates the loss (used
/// for the perturbed passes). Up to `samples_per_block` coordinates are
/// drawn per block with a deterministic rng.
pub fn check_params<L, G>(
    ps: &mut ParamStore<f64>,
    mut loss_and_grad: G,
    mut loss_only: L,
    samples_per_block: usize,
    h: f64,
    seed: u64,
) -> GradReport
where
    G: FnMut(&ParamStore<f64>) -> (f64, Vec<f64>),
    L: FnMut(&ParamStore<f64>) -> f64,
{
    let (_, grad) = loss_and_grad(ps);
    assert_eq!(grad.len(), ps.len_scalars());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries: Vec<_> = ps.entries().to_vec();
    let mut report = GradReport::default();
    for e in entries {
        let n = e.len();
        let idxs: Vec<usize> = if n <= samples_per_block {
            (0..n).collect()
        } else {
            sample(&mut rng, n, samples_per_block).into_vec()
        };
        let mut worst = 0.0f64;
        for local in &idxs {
            let i = e.offset + local;
            let orig = ps.data()[i];
            let step = h * orig.abs().max(1.0);
            ps.data_mut()[i] = orig + step;
            let lp = loss_only(ps);
            ps.data_mut()[i] = orig - step;
            let lm = loss_only(ps);
            ps.data_mut()[i] = orig;
            let fd = (lp - lm) / (2.0 * step);
            worst = worst.max(rel_err(fd, grad[i]));
        }
        report.blocks.push(GradBlockReport {
            name: e.name.clone(),
            max_rel_err: worst,
            checked: idxs.len(),
        });
    }
    report
}
