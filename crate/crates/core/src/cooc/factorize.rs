use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use super::CoocError;
use crate::losses::{cooc_loss, DiscreteCooc};
use crate::nn::ModelCheckpoint;

/// A `K x d` token embedding table and the `w` it was fitted with.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub values: Array2<f64>,
    pub w: f64,
}

impl EmbeddingTable {
    pub fn to_checkpoint(&self, step: u64, seed: u64) -> ModelCheckpoint {
        let (k, d) = self.values.dim();
        ModelCheckpoint {
            spec_text: format!("kind=embedding_table\nvocab={k}\ndim={d}\nw={}\n", self.w),
            params: self.values.iter().copied().collect(),
            step,
            seed,
        }
    }

    pub fn from_checkpoint(ck: &ModelCheckpoint) -> Result<Self, CoocError> {
        let bad = |what: &str| CoocError::InvalidArgument(format!("embedding table checkpoint: {what}"));
        let (mut kind, mut k, mut d, mut w) = (None, None, None, None);
        for line in ck.spec_text.lines().filter(|l| !l.trim().is_empty()) {
            let (key, v) = line.split_once('=').ok_or_else(|| bad("malformed spec line"))?;
            match key {
                "kind" => kind = Some(v.to_string()),
                "vocab" => k = v.parse::<usize>().ok(),
                "dim" => d = v.parse::<usize>().ok(),
                "w" => w = v.parse::<f64>().ok(),
                _ => return Err(bad("unknown spec key")),
            }
        }
        if kind.as_deref() != Some("embedding_table") {
            return Err(bad("not an embedding table"));
        }
        let (k, d, w) = match (k, d, w) {
            (Some(k), Some(d), Some(w)) => (k, d, w),
            _ => return Err(bad("missing vocab, dim or w")),
        };
        let values = Array2::from_shape_vec((k, d), ck.params.clone())
            .map_err(|_| bad("parameter count does not match vocab x dim"))?;
        Ok(Self { values, w })
    }
}

#[derive(Debug, Clone)]
pub struct FactorizeResult {
    pub table: EmbeddingTable,
    /// Loss at initialization followed by the loss after every step.
    pub trace: Vec<f64>,
    /// Learning rate in effect after the last step.
    pub final_lr: f64,
    pub rejected_steps: usize,
}

/// Full-batch gradient descent on the co-occurrence loss from a Gaussian
/// initialization with standard deviation `0.1 / sqrt(d)`.
///
/// A step that would increase the loss is discarded and the learning rate
/// halved, so the trace is non-increasing.
pub fn factorize<R: Rng + ?Sized>(
    dc: &DiscreteCooc,
    d: usize,
    w: f64,
    steps: usize,
    lr: f64,
    rng: &mut R,
) -> Result<FactorizeResult, CoocError> {
    if d == 0 || !(lr > 0.0) {
        return Err(CoocError::InvalidArgument(format!(
            "need d >= 1 and lr > 0, got d = {d}, lr = {lr}"
        )));
    }
    let k = dc.vocab_size();
    let sigma = 0.1 / (d as f64).sqrt();
    let init = Array2::from_shape_fn((k, d), |_| sigma * rng.sample::<f64, _>(StandardNormal));
    factorize_from(dc, init, w, steps, lr)
}

/// As [`factorize`], starting from a given table.
pub fn factorize_from(
    dc: &DiscreteCooc,
    init: Array2<f64>,
    w: f64,
    steps: usize,
    lr: f64,
) -> Result<FactorizeResult, CoocError> {
    let mut e = init;
    let (value, mut grad) = cooc_loss(&e, dc, w)?;
    let mut loss = value.total;
    if !loss.is_finite() {
        return Err(CoocError::Divergence { step: 0 });
    }
    let mut trace = Vec::with_capacity(steps + 1);
    trace.push(loss);
    let mut lr = lr;
    let mut rejected_steps = 0;
    for step in 1..=steps {
        let candidate = &e - &(&grad * lr);
        let (value, cand_grad) = cooc_loss(&candidate, dc, w)?;
        if !value.total.is_finite() && lr < f64::MIN_POSITIVE {
            return Err(CoocError::Divergence { step });
        }
        if value.total.is_finite() && value.total <= loss {
            e = candidate;
            grad = cand_grad;
            loss = value.total;
        } else {
            lr *= 0.5;
            rejected_steps += 1;
        }
        trace.push(loss);
    }
    Ok(FactorizeResult {
        table: EmbeddingTable { values: e, w },
        trace,
        final_lr: lr,
        rejected_steps,
    })
}

/// A distribution whose ratio matrix is exactly `w E* E*^T` for a known
/// `K x d` table `E*`.
///
/// `E*_i = [1, u_i] / sqrt(w)` with the `u_i` centred under random marginals
/// `p` and scaled so `|u_i . u_j| <= 0.9`; then `joint = p p^T (1 + u u^T)`
/// is non-negative with marginals `p`.
pub fn planted_instance<R: Rng + ?Sized>(
    k: usize,
    d: usize,
    w: f64,
    rng: &mut R,
) -> Result<(DiscreteCooc, Array2<f64>), CoocError> {
    if k == 0 || d < 2 || !(w > 0.0) {
        return Err(CoocError::InvalidArgument(format!(
            "planted instance needs K >= 1, d >= 2, w > 0; got K = {k}, d = {d}, w = {w}"
        )));
    }
    let raw: Array1<f64> = (0..k).map(|_| 0.5 + rng.random::<f64>()).collect();
    let p = &raw / raw.sum();
    let mut u = Array2::from_shape_fn((k, d - 1), |_| rng.sample::<f64, _>(StandardNormal));
    let centre = p.dot(&u);
    u -= &centre.insert_axis(Axis(0));
    let gram = u.dot(&u.t());
    let peak = gram.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        u *= (0.9 / peak).sqrt();
    }
    let gram = u.dot(&u.t());
    let joint = Array2::from_shape_fn((k, k), |(i, j)| p[i] * p[j] * (1.0 + gram[[i, j]]));
    let total = joint.sum();
    let dc = DiscreteCooc::new(joint / total)?;
    let mut planted = Array2::zeros((k, d));
    planted.column_mut(0).fill(1.0);
    planted.slice_mut(ndarray::s![.., 1..]).assign(&u);
    planted /= w.sqrt();
    Ok((dc, planted))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_steps_returns_initialization() {
        let mut rng = crate::seeded_rng(0, 0);
        let dc = DiscreteCooc::random(4, true, 0.0, &mut rng);
        let init = Array2::from_elem((4, 2), 0.3);
        let r = factorize_from(&dc, init.clone(), 1.0, 0, 0.1).unwrap();
        assert_eq!(r.table.values, init);
        assert_eq!(r.trace.len(), 1);
    }

    #[test]
    fn planted_solution_has_zero_loss() {
        let mut rng = crate::seeded_rng(5, 0);
        let (dc, planted) = planted_instance(16, 4, 2.0, &mut rng).unwrap();
        let (v, _) = cooc_loss(&planted, &dc, 2.0).unwrap();
        assert!(v.total < 1e-25, "{}", v.total);
        assert!((&dc.p1 - &dc.p2).iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn trace_is_monotone_under_large_lr() {
        let mut rng = crate::seeded_rng(6, 0);
        let dc = DiscreteCooc::random(6, true, 0.2, &mut rng);
        let r = factorize(&dc, 3, 1.0, 200, 1e4, &mut rng).unwrap();
        assert!(r.rejected_steps > 0);
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn table_checkpoint_round_trip() {
        let t = EmbeddingTable {
            values: Array2::from_shape_fn((3, 2), |(i, j)| i as f64 - 0.5 * j as f64),
            w: 4.0,
        };
        let ck = ModelCheckpoint::from_bytes(&t.to_checkpoint(7, 1).to_bytes()).unwrap();
        assert_eq!(EmbeddingTable::from_checkpoint(&ck).unwrap(), t);
    }
}
