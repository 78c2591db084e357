use ndarray::{Array1, Array2, Axis};

use super::{check_pair, LossComponent, LossError, LossOutput, LossValue};

/// Added to the per-dimension variance before the square root.
pub const VICREG_STD_EPS: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VicRegCoeffs {
    pub var: f64,
    pub inv: f64,
    pub cov: f64,
}

impl Default for VicRegCoeffs {
    fn default() -> Self {
        Self {
            var: 25.0,
            inv: 25.0,
            cov: 1.0,
        }
    }
}

struct BranchTerms {
    variance: f64,
    covariance: f64,
    grad_variance: Array2<f64>,
    grad_covariance: Array2<f64>,
}

fn branch_terms(z: &Array2<f64>) -> BranchTerms {
    let (b, d) = z.dim();
    let denom = (b - 1) as f64;
    let mean = z.mean_axis(Axis(0)).expect("non-empty batch");
    let zc = z - &mean;
    let var: Array1<f64> = zc.map(|v| v * v).sum_axis(Axis(0)) / denom;
    let std = var.mapv(|v| (v + VICREG_STD_EPS).sqrt());

    let variance = std.iter().map(|s| (1.0 - s).max(0.0)).sum::<f64>() / d as f64;
    let coef = std.mapv(|s| if s < 1.0 { -1.0 / (d as f64 * s * denom) } else { 0.0 });
    let grad_variance = &zc * &coef;

    let mut c = zc.t().dot(&zc) / denom;
    for k in 0..d {
        c[[k, k]] = 0.0;
    }
    let covariance = c.iter().map(|v| v * v).sum::<f64>() / d as f64;
    let grad_covariance = zc.dot(&c) * (4.0 / (d as f64 * denom));

    BranchTerms {
        variance,
        covariance,
        grad_variance,
        grad_covariance,
    }
}

/// VICReg: invariance `(1/B) sum_i ||z1_i - z2_i||^2`, variance hinge on the
/// per-dimension standard deviation (mean over dimensions, averaged over the
/// two branches), covariance `sum_{k != l} C_kl^2 / d` (summed over branches).
pub fn vicreg_loss(
    z1: &Array2<f64>,
    z2: &Array2<f64>,
    coeffs: VicRegCoeffs,
) -> Result<LossOutput, LossError> {
    let b = check_pair(z1, z2)? as f64;
    let diff = z1 - z2;
    let invariance = diff.iter().map(|v| v * v).sum::<f64>() / b;
    let t1 = branch_terms(z1);
    let t2 = branch_terms(z2);

    let inv_grad = &diff * (2.0 * coeffs.inv / b);
    let grad_z1 = &inv_grad
        + &(&t1.grad_variance * (0.5 * coeffs.var))
        + &(&t1.grad_covariance * coeffs.cov);
    let grad_z2 = &(&t2.grad_variance * (0.5 * coeffs.var)) + &(&t2.grad_covariance * coeffs.cov)
        - &inv_grad;

    Ok(LossOutput {
        value: LossValue::from_components(vec![
            LossComponent {
                name: "invariance",
                value: invariance,
                weight: coeffs.inv,
            },
            LossComponent {
                name: "variance",
                value: 0.5 * (t1.variance + t2.variance),
                weight: coeffs.var,
            },
            LossComponent {
                name: "covariance",
                value: t1.covariance + t2.covariance,
                weight: coeffs.cov,
            },
        ]),
        grad_z1,
        grad_z2,
    })
}
