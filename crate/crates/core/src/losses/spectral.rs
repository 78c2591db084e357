use ndarray::Array2;

use super::{check_pair, LossComponent, LossError, LossOutput, LossValue};

pub const DEFAULT_LAMBDA: f64 = 1.0;

/// Spectral contrastive loss on a paired batch:
///
/// `-(1/B) sum_i z1_i . z2_i + lambda / (B (B-1)) sum_{i != j} (z1_i . z2_j)^2`
///
/// Components are `positive` (weight 1) and `negative_sq` (weight `lambda`).
pub fn spectral_loss(
    z1: &Array2<f64>,
    z2: &Array2<f64>,
    lambda: f64,
) -> Result<LossOutput, LossError> {
    let b = check_pair(z1, z2)?;
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(LossError::InvalidParameter(format!("lambda = {lambda}")));
    }
    let bf = b as f64;
    let pairs = bf * (bf - 1.0);

    let mut m = z1.dot(&z2.t());
    let positive = -(0..b).map(|i| m[[i, i]]).sum::<f64>() / bf;
    for i in 0..b {
        m[[i, i]] = 0.0;
    }
    let negative_sq = m.iter().map(|v| v * v).sum::<f64>() / pairs;

    let c = 2.0 * lambda / pairs;
    let grad_z1 = z2 * (-1.0 / bf) + &(m.dot(z2) * c);
    let grad_z2 = z1 * (-1.0 / bf) + &(m.t().dot(z1) * c);

    Ok(LossOutput {
        value: LossValue::from_components(vec![
            LossComponent {
                name: "positive",
                value: positive,
                weight: 1.0,
            },
            LossComponent {
                name: "negative_sq",
                value: negative_sq,
                weight: lambda,
            },
        ]),
        grad_z1,
        grad_z2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn hand_example() {
        let z1 = array![[1.0], [0.0]];
        let z2 = array![[1.0], [1.0]];
        let out = spectral_loss(&z1, &z2, 1.0).unwrap();
        assert_eq!(out.value.component("positive"), Some(-0.5));
        assert_eq!(out.value.component("negative_sq"), Some(0.5));
        assert_eq!(out.value.total, 0.0);
    }

    #[test]
    fn double_loop_oracle() {
        let mut rng = crate::seeded_rng(9, 0);
        let z1 = Array2::from_shape_fn((5, 3), |_| rand::Rng::random_range(&mut rng, -1.0..1.0));
        let z2 = Array2::from_shape_fn((5, 3), |_| rand::Rng::random_range(&mut rng, -1.0..1.0));
        let lambda = 0.7;
        let mut pos = 0.0;
        let mut neg = 0.0;
        for i in 0..5 {
            for j in 0..5 {
                let s: f64 = (0..3).map(|k| z1[[i, k]] * z2[[j, k]]).sum();
                if i == j {
                    pos -= s / 5.0;
                } else {
                    neg += s * s / 20.0;
                }
            }
        }
        let out = spectral_loss(&z1, &z2, lambda).unwrap();
        assert!((out.value.total - (pos + lambda * neg)).abs() < 1e-13);
        assert!((out.value.recombined() - out.value.total).abs() < 1e-15);
    }

    #[test]
    fn single_row_rejected() {
        let z = array![[1.0, 2.0]];
        assert!(matches!(
            spectral_loss(&z, &z, 1.0),
            Err(LossError::BatchTooSmall { batch: 1 })
        ));
    }
}
