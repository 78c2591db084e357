use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{cooc_loss, DiscreteCooc, LossError};

/// Largest vocabulary the exact-enumeration verifier accepts.
pub const MAX_ENUM_VOCAB: usize = 32;
/// Largest embedding dimension the exact-enumeration verifier accepts.
pub const MAX_ENUM_DIM: usize = 8;

/// Population spectral loss of an embedding table, by exact enumeration over
/// token pairs: positives are drawn from `joint`, negatives from `p1 x p2`.
///
/// `-sum_ij joint_ij s_ij + lambda sum_ij p1(i) p2(j) s_ij^2` with `s = E E^T`.
pub fn population_spectral_loss(
    e: &Array2<f64>,
    dc: &DiscreteCooc,
    lambda: f64,
) -> Result<(f64, Array2<f64>), LossError> {
    let k = dc.vocab_size();
    if e.nrows() != k {
        return Err(LossError::Shape(format!(
            "embedding table has {} rows for a vocabulary of {k}",
            e.nrows()
        )));
    }
    let s = e.dot(&e.t());
    let mut value = 0.0;
    let mut g = Array2::zeros((k, k));
    for i in 0..k {
        for j in 0..k {
            let q = dc.p1[i] * dc.p2[j];
            let sij = s[[i, j]];
            value += -dc.joint[[i, j]] * sij + lambda * q * sij * sij;
            g[[i, j]] = -dc.joint[[i, j]] + 2.0 * lambda * q * sij;
        }
    }
    let grad = g.dot(e) + g.t().dot(e);
    Ok((value, grad))
}

/// Outcome of comparing the co-occurrence loss against `2w` times the
/// population spectral loss (with `lambda = w / 2`) on several tables.
#[derive(Debug, Clone, PartialEq)]
pub struct Prop1Report {
    pub w: f64,
    pub lambda: f64,
    /// `L_C - 2w L_S` for each table.
    pub gaps: Vec<f64>,
    pub median_gap: f64,
    /// `max |gap - median_gap|`.
    pub max_gap_deviation: f64,
    /// Largest entrywise `|grad L_C - 2w grad L_S|` over all tables.
    pub max_grad_deviation: f64,
    /// `sum joint^2 / (p1 p2)`, the value the gap should take.
    pub expected_gap: f64,
}

/// Runs the comparison on caller-provided tables.
pub fn prop1_verify_tables(
    dc: &DiscreteCooc,
    w: f64,
    tables: &[Array2<f64>],
) -> Result<Prop1Report, LossError> {
    if tables.is_empty() {
        return Err(LossError::InvalidParameter("no embedding tables given".into()));
    }
    let k = dc.vocab_size();
    let d = tables[0].ncols();
    if k > MAX_ENUM_VOCAB || d > MAX_ENUM_DIM {
        return Err(LossError::TooLarge {
            k,
            d,
            max_k: MAX_ENUM_VOCAB,
            max_d: MAX_ENUM_DIM,
        });
    }
    let lambda = w / 2.0;
    let mut gaps = Vec::with_capacity(tables.len());
    let mut max_grad_deviation = 0.0f64;
    for e in tables {
        if e.ncols() != d {
            return Err(LossError::Shape("tables differ in dimension".into()));
        }
        let (lc, gc) = cooc_loss(e, dc, w)?;
        let (ls, gs) = population_spectral_loss(e, dc, lambda)?;
        gaps.push(lc.total - 2.0 * w * ls);
        let dev = gc
            .iter()
            .zip(gs.iter())
            .map(|(a, b)| (a - 2.0 * w * b).abs())
            .fold(0.0, f64::max);
        max_grad_deviation = max_grad_deviation.max(dev);
    }
    let mut sorted = gaps.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median_gap = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let max_gap_deviation = gaps
        .iter()
        .map(|g| (g - median_gap).abs())
        .fold(0.0, f64::max);
    let mut expected_gap = 0.0;
    for i in 0..k {
        for j in 0..k {
            let q = dc.p1[i] * dc.p2[j];
            if q > 0.0 {
                expected_gap += dc.joint[[i, j]].powi(2) / q;
            }
        }
    }
    Ok(Prop1Report {
        w,
        lambda,
        gaps,
        median_gap,
        max_gap_deviation,
        max_grad_deviation,
        expected_gap,
    })
}

/// Runs the comparison on `trials` Gaussian tables of width `dim`.
pub fn prop1_verify<R: Rng + ?Sized>(
    dc: &DiscreteCooc,
    w: f64,
    dim: usize,
    trials: usize,
    rng: &mut R,
) -> Result<Prop1Report, LossError> {
    let k = dc.vocab_size();
    if k > MAX_ENUM_VOCAB || dim > MAX_ENUM_DIM {
        return Err(LossError::TooLarge {
            k,
            d: dim,
            max_k: MAX_ENUM_VOCAB,
            max_d: MAX_ENUM_DIM,
        });
    }
    if dim == 0 || trials == 0 {
        return Err(LossError::InvalidParameter(
            "dimension and trial count must be positive".into(),
        ));
    }
    let scale = 1.0 / (dim as f64).sqrt();
    let tables: Vec<Array2<f64>> = (0..trials)
        .map(|_| Array2::from_shape_fn((k, dim), |_| scale * rng.sample::<f64, _>(StandardNormal)))
        .collect();
    prop1_verify_tables(dc, w, &tables)
}
