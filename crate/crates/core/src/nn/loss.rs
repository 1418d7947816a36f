//! Deep supervision reconstruction loss.

use super::{real, NnError, Real, ReconLoss, Tensor};

/// Weighted sum of per-head reconstruction losses against one target:
/// `L = Σ_j w_j * ℓ(head_j, target)` with `ℓ` the per-pixel mean of squared
/// (L2) or absolute (L1) error. Returns the loss and one gradient tensor per
/// head.
pub fn deep_supervision_loss<T: Real>(
    heads: &[Tensor<T>],
    target: &Tensor<T>,
    weights: &[f64],
    recon: ReconLoss,
) -> Result<(T, Vec<Tensor<T>>), NnError> {
    if heads.len() != weights.len() {
        return Err(NnError::WeightHeadMismatch {
            weights: weights.len(),
            heads: heads.len(),
        });
    }
    let n = target.len();
    let inv_n: T = real(1.0 / n as f64);
    let mut total = T::zero();
    let mut grads = Vec::with_capacity(heads.len());
    for (head, &wj) in heads.iter().zip(weights) {
        if head.shape() != target.shape() {
            return Err(NnError::ShapeMismatch {
                expected: format!("{:?}", target.shape()),
                got: format!("{:?}", head.shape()),
            });
        }
        let w: T = real(wj);
        let mut g = Tensor::zeros(head.shape());
        let mut acc = T::zero();
        match recon {
            ReconLoss::L2 => {
                for ((gv, &h), &t) in g.data_mut().iter_mut().zip(head.data()).zip(target.data())
                {
                    let d = h - t;
                    acc = acc + d * d;
                    *gv = w * real::<T>(2.0) * d * inv_n;
                }
            }
            ReconLoss::L1 => {
                for ((gv, &h), &t) in g.data_mut().iter_mut().zip(head.data()).zip(target.data())
                {
                    let d = h - t;
                    acc = acc + d.abs();
                    *gv = w * d.signum() * inv_n;
                    if d == T::zero() {
                        *gv = T::zero();
                    }
                }
            }
        }
        total = total + w * acc * inv_n;
        grads.push(g);
    }
    Ok((total, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(vals: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(&[1, 1, vals.len()], vals.to_vec()).unwrap()
    }

    #[test]
    fn perfect_heads_zero_loss() {
        let target = t(&[0.5, -0.5, 1.0]);
        let heads = vec![target.clone(), target.clone()];
        let (l, g) = deep_supervision_loss(&heads, &target, &[1.0, 1.0], ReconLoss::L2).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|t| t.data().iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn constant_offset_l2_is_c_squared() {
        // One head off by c everywhere, weight 1, others exact: loss = c^2.
        let c = 0.3;
        let target = t(&[1.0, 2.0, 3.0, 4.0]);
        let off = t(&[1.0 + c, 2.0 + c, 3.0 + c, 4.0 + c]);
        let (l, _) =
            deep_supervision_loss(&[target.clone(), off], &target, &[1.0, 1.0], ReconLoss::L2)
                .unwrap();
        assert!((l - c * c).abs() < 1e-12, "{l}");
    }

    #[test]
    fn doubling_weights_doubles_loss_and_grads() {
        let target = t(&[0.0, 1.0]);
        let head = t(&[0.5, 0.25]);
        let (l1, g1) =
            deep_supervision_loss(&[head.clone()], &target, &[1.0], ReconLoss::L2).unwrap();
        let (l2, g2) = deep_supervision_loss(&[head], &target, &[2.0], ReconLoss::L2).unwrap();
        assert!((l2 - 2.0 * l1).abs() < 1e-12);
        for (a, b) in g1[0].data().iter().zip(g2[0].data()) {
            assert!((b - 2.0 * a).abs() < 1e-12);
        }
    }

    #[test]
    fn l1_gradient_is_weighted_sign() {
        let target = t(&[0.0, 0.0, 0.0]);
        let head = t(&[0.5, -0.5, 0.0]);
        let (l, g) = deep_supervision_loss(&[head], &target, &[3.0], ReconLoss::L1).unwrap();
        assert!((l - 1.0).abs() < 1e-12); // 3 * (0.5+0.5+0)/3
        assert_eq!(g[0].data(), &[1.0, -1.0, 0.0]);
    }

    #[test]
    fn weight_count_mismatch_errors() {
        let target = t(&[0.0]);
        assert!(matches!(
            deep_supervision_loss(&[target.clone()], &target, &[1.0, 1.0], ReconLoss::L2)
                .unwrap_err(),
            NnError::WeightHeadMismatch { weights: 2, heads: 1 }
        ));
    }

    #[test]
    fn nonnegative_and_zero_iff_exact_l2() {
        let target = t(&[1.0, -1.0]);
        let almost = t(&[1.0, -1.0 + 1e-9]);
        let (l, _) = deep_supervision_loss(&[almost], &target, &[1.0], ReconLoss::L2).unwrap();
        assert!(l > 0.0);
    }
}
