use ndarray::Array2;

use super::{DiscreteCooc, LossComponent, LossError, LossValue};

/// Weighted co-occurrence residual for an embedding table `e` (`K x d`):
///
/// `L = sum_ij p1(i) p2(j) (w e_i . e_j - r_ij)^2`, `r_ij = joint_ij / (p1(i) p2(j))`.
///
/// Pairs with `p1(i) p2(j) = 0` contribute nothing. Returns the value and
/// `dL/de`.
pub fn cooc_loss(
    e: &Array2<f64>,
    dc: &DiscreteCooc,
    w: f64,
) -> Result<(LossValue, Array2<f64>), LossError> {
    let k = dc.vocab_size();
    if e.nrows() != k {
        return Err(LossError::Shape(format!(
            "embedding table has {} rows for a vocabulary of {k}",
            e.nrows()
        )));
    }
    if !(w > 0.0) || !w.is_finite() {
        return Err(LossError::InvalidParameter(format!("w = {w}")));
    }
    let s = e.dot(&e.t());
    let mut g = Array2::zeros((k, k));
    let mut total = 0.0;
    for i in 0..k {
        for j in 0..k {
            let weight = dc.p1[i] * dc.p2[j];
            if weight > 0.0 {
                let resid = w * s[[i, j]] - dc.joint[[i, j]] / weight;
                total += weight * resid * resid;
                g[[i, j]] = 2.0 * weight * resid * w;
            }
        }
    }
    let grad = g.dot(e) + g.t().dot(e);
    let value = LossValue::from_components(vec![LossComponent {
        name: "weighted_residual",
        value: total,
        weight: 1.0,
    }]);
    Ok((value, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn exact_fit_is_zero() {
        // Independent tokens: r = 1 everywhere, so e_i = [1/sqrt(w)] fits.
        let p = [0.25, 0.75];
        let joint = Array2::from_shape_fn((2, 2), |(i, j)| p[i] * p[j]);
        let dc = DiscreteCooc::new(joint).unwrap();
        let w = 4.0;
        let e = array![[0.5], [0.5]];
        let (v, g) = cooc_loss(&e, &dc, w).unwrap();
        assert_eq!(v.total, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn zero_marginal_pairs_are_skipped() {
        let dc = DiscreteCooc::new(array![[1.0, 0.0], [0.0, 0.0]]).unwrap();
        // Row 1 is unconstrained: moving it changes nothing.
        let a = array![[1.0], [5.0]];
        let b = array![[1.0], [-3.0]];
        let (va, ga) = cooc_loss(&a, &dc, 1.0).unwrap();
        let (vb, _) = cooc_loss(&b, &dc, 1.0).unwrap();
        assert_eq!(va.total, vb.total);
        assert_eq!(ga[[1, 0]], 0.0);
    }
}
