use std::cmp::Ordering;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use super::EvalError;

/// Test rows scored against the corpus per similarity block.
const KNN_BLOCK: usize = 256;

fn unit_rows(m: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = m.to_owned();
    for mut row in out.rows_mut() {
        let n = row.dot(&row).sqrt();
        if n > 0.0 {
            row /= n;
        }
    }
    out
}

fn check_sets(
    train: &Array2<f64>,
    train_labels: &[u8],
    test: &Array2<f64>,
    test_labels: Option<&[u8]>,
) -> Result<(), EvalError> {
    if train.nrows() == 0 {
        return Err(EvalError::Empty("training set"));
    }
    if test.nrows() == 0 {
        return Err(EvalError::Empty("test set"));
    }
    if train.ncols() != test.ncols() {
        return Err(EvalError::Dimension {
            expected: train.ncols(),
            found: test.ncols(),
        });
    }
    if train_labels.len() != train.nrows() {
        return Err(EvalError::Dimension {
            expected: train.nrows(),
            found: train_labels.len(),
        });
    }
    if let Some(t) = test_labels {
        if t.len() != test.nrows() {
            return Err(EvalError::Dimension {
                expected: test.nrows(),
                found: t.len(),
            });
        }
    }
    Ok(())
}

/// Cosine k-nearest-neighbour labels for every test row.
///
/// Neighbours are ranked by similarity, then by corpus index. The vote goes
/// to the most frequent class, then the larger summed similarity, then the
/// lower class index.
pub fn knn_predict(
    train: &Array2<f64>,
    train_labels: &[u8],
    test: &Array2<f64>,
    k: usize,
) -> Result<Vec<u8>, EvalError> {
    check_sets(train, train_labels, test, None)?;
    if k == 0 || k > train.nrows() {
        return Err(EvalError::InvalidK {
            k,
            corpus: train.nrows(),
        });
    }
    let corpus = unit_rows(train.view());
    let queries = unit_rows(test.view());
    let mut out = Vec::with_capacity(test.nrows());
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(train.nrows());
    for start in (0..test.nrows()).step_by(KNN_BLOCK) {
        let end = (start + KNN_BLOCK).min(test.nrows());
        let sims = queries.slice(s![start..end, ..]).dot(&corpus.t());
        for row in sims.rows() {
            order.clear();
            order.extend(row.iter().copied().zip(0..));
            let rank = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
            if k < order.len() {
                order.select_nth_unstable_by(k - 1, rank);
            }
            let mut counts = [0usize; 256];
            let mut sums = [0.0f64; 256];
            let mut top = order[..k].to_vec();
            top.sort_by(rank);
            for &(sim, idx) in &top {
                let c = train_labels[idx] as usize;
                counts[c] += 1;
                sums[c] += sim;
            }
            let best = (0..256usize)
                .filter(|&c| counts[c] > 0)
                .max_by(|&a, &b| {
                    counts[a]
                        .cmp(&counts[b])
                        .then(sums[a].total_cmp(&sums[b]))
                        .then(b.cmp(&a))
                })
                .expect("k >= 1");
            out.push(best as u8);
        }
    }
    Ok(out)
}

fn accuracy(pred: &[u8], truth: &[u8]) -> f64 {
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len() as f64
}

/// Top-1 accuracy of [`knn_predict`].
pub fn knn_eval(
    train: &Array2<f64>,
    train_labels: &[u8],
    test: &Array2<f64>,
    test_labels: &[u8],
    k: usize,
) -> Result<f64, EvalError> {
    check_sets(train, train_labels, test, Some(test_labels))?;
    Ok(accuracy(&knn_predict(train, train_labels, test, k)?, test_labels))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub l2: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            lr: 0.5,
            l2: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub accuracy: f64,
    pub train_accuracy: f64,
    pub final_loss: f64,
}

/// Centres and scales columns using training-set statistics. Constant
/// columns are only centred.
pub fn standardize_features(train: &Array2<f64>, test: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let mean = train.mean_axis(Axis(0)).expect("non-empty training set");
    let std: Array1<f64> = train
        .std_axis(Axis(0), 0.0)
        .mapv(|s| if s > 1e-12 { s } else { 1.0 });
    ((train - &mean) / &std, (test - &mean) / &std)
}

fn logits(w: &Array2<f64>, x: &Array2<f64>) -> Array2<f64> {
    let d = x.ncols();
    x.dot(&w.slice(s![.., ..d]).t()) + w.column(d)
}

fn softmax_rows(mut z: Array2<f64>) -> Array2<f64> {
    for mut row in z.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    z
}

/// Mean cross-entropy of a linear softmax classifier plus `l2 / 2 |W|^2`
/// (bias excluded), and its gradient. `w` is `classes x (dim + 1)` with the
/// bias in the last column.
pub fn softmax_objective(
    w: &Array2<f64>,
    x: &Array2<f64>,
    labels: &[u8],
    l2: f64,
) -> (f64, Array2<f64>) {
    let (n, d) = x.dim();
    let p = softmax_rows(logits(w, x));
    let mut loss = 0.0;
    let mut delta = p;
    for (i, &y) in labels.iter().enumerate() {
        loss -= delta[[i, y as usize]].max(f64::MIN_POSITIVE).ln();
        delta[[i, y as usize]] -= 1.0;
    }
    loss /= n as f64;
    let weights = w.slice(s![.., ..d]);
    loss += 0.5 * l2 * weights.iter().map(|v| v * v).sum::<f64>();
    let mut grad = Array2::zeros(w.dim());
    grad.slice_mut(s![.., ..d])
        .assign(&(delta.t().dot(x) / n as f64 + &(&weights * l2)));
    grad.column_mut(d).assign(&(delta.sum_axis(Axis(0)) / n as f64));
    (loss, grad)
}

/// Multinomial logistic regression on standardized frozen features, trained
/// by full-batch gradient descent from zero.
pub fn linear_probe(
    train: &Array2<f64>,
    train_labels: &[u8],
    test: &Array2<f64>,
    test_labels: &[u8],
    config: ProbeConfig,
) -> Result<ProbeResult, EvalError> {
    check_sets(train, train_labels, test, Some(test_labels))?;
    let mut distinct = train_labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(EvalError::SingleClass(distinct.len()));
    }
    let classes = *train_labels.iter().chain(test_labels).max().expect("non-empty") as usize + 1;
    let (xtr, xte) = standardize_features(train, test);
    let mut w = Array2::zeros((classes, train.ncols() + 1));
    let mut final_loss = f64::NAN;
    for _ in 0..config.epochs {
        let (loss, grad) = softmax_objective(&w, &xtr, train_labels, config.l2);
        if !loss.is_finite() {
            return Err(EvalError::NonFinite("linear probe loss"));
        }
        final_loss = loss;
        w.scaled_add(-config.lr, &grad);
    }
    let predict = |x: &Array2<f64>| -> Vec<u8> {
        logits(&w, x)
            .rows()
            .into_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(Ordering::Equal).then(b.0.cmp(&a.0)))
                    .map(|(c, _)| c as u8)
                    .expect("at least two classes")
            })
            .collect()
    };
    Ok(ProbeResult {
        accuracy: accuracy(&predict(&xte), test_labels),
        train_accuracy: accuracy(&predict(&xtr), train_labels),
        final_loss,
    })
}
