use ndarray::{Array1, Array2, Axis};

use super::{check_pair, LossComponent, LossError, LossOutput, LossValue};

pub const DEFAULT_TEMPERATURE: f64 = 0.1;
const NORM_FLOOR: f64 = 1e-12;

fn normalize_rows(z: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
    let norms = z
        .map_axis(Axis(1), |r| r.dot(&r).sqrt())
        .mapv(|n| n.max(NORM_FLOOR));
    let u = z / &norms.view().insert_axis(Axis(1));
    (u, norms)
}

fn normalize_backward(u: &Array2<f64>, norms: &Array1<f64>, du: &Array2<f64>) -> Array2<f64> {
    let proj = (u * du).sum_axis(Axis(1));
    (du - &(u * &proj.insert_axis(Axis(1)))) / norms.view().insert_axis(Axis(1))
}

/// Softmax along `axis` and the mean negative log-probability of the diagonal.
fn softmax_ce(s: &Array2<f64>, axis: Axis) -> (Array2<f64>, f64) {
    let b = s.nrows();
    let mut p = s.clone();
    let mut ce = 0.0;
    for (i, mut lane) in p.axis_iter_mut(if axis == Axis(1) { Axis(0) } else { Axis(1) }).enumerate() {
        let max = lane.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        lane.mapv_inplace(|v| (v - max).exp());
        let sum = lane.sum();
        ce -= (lane[i] / sum).ln();
        lane.mapv_inplace(|v| v / sum);
    }
    (p, ce / b as f64)
}

/// Symmetric InfoNCE on L2-normalized rows with temperature `tau`. The
/// logits are `u1 u2^T / tau`; each row and each column is a classification
/// of its matching partner against the other view's batch.
pub fn info_nce(z1: &Array2<f64>, z2: &Array2<f64>, tau: f64) -> Result<LossOutput, LossError> {
    let b = check_pair(z1, z2)?;
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(LossError::InvalidParameter(format!("temperature = {tau}")));
    }
    let (u1, n1) = normalize_rows(z1);
    let (u2, n2) = normalize_rows(z2);
    let s = u1.dot(&u2.t()) / tau;
    let (p_rows, row_ce) = softmax_ce(&s, Axis(1));
    let (p_cols, col_ce) = softmax_ce(&s, Axis(0));

    let mut ds = (&p_rows + &p_cols) / (2.0 * b as f64);
    for i in 0..b {
        ds[[i, i]] -= 1.0 / b as f64;
    }
    let du1 = ds.dot(&u2) / tau;
    let du2 = ds.t().dot(&u1) / tau;

    Ok(LossOutput {
        value: LossValue::from_components(vec![
            LossComponent {
                name: "row_ce",
                value: row_ce,
                weight: 0.5,
            },
            LossComponent {
                name: "col_ce",
                value: col_ce,
                weight: 0.5,
            },
        ]),
        grad_z1: normalize_backward(&u1, &n1, &du1),
        grad_z2: normalize_backward(&u2, &n2, &du2),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn orthogonal_pairs_closed_form() {
        // u1 = u2 = I_2: logits diag 1/tau, off-diag 0.
        let z = array![[3.0, 0.0], [0.0, 0.5]];
        let tau = 0.5;
        let out = info_nce(&z, &z, tau).unwrap();
        let expected = -(2.0f64.exp() / (2.0f64.exp() + 1.0)).ln();
        assert!((out.value.total - expected).abs() < 1e-14);
        assert!((out.value.component("row_ce").unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn scale_invariance() {
        let z1 = array![[1.0, 2.0, -1.0], [0.3, -0.2, 0.9], [-1.0, 0.0, 0.4]];
        let z2 = array![[0.5, 1.0, 0.0], [0.1, 0.1, 0.7], [-2.0, 0.3, 0.2]];
        let a = info_nce(&z1, &z2, 0.1).unwrap();
        let b = info_nce(&(&z1 * 7.0), &z2, 0.1).unwrap();
        assert!((a.value.total - b.value.total).abs() < 1e-12);
        // Gradient is orthogonal to each row.
        for (g, z) in a.grad_z1.rows().into_iter().zip(z1.rows()) {
            assert!(g.dot(&z).abs() < 1e-12);
        }
    }
}
