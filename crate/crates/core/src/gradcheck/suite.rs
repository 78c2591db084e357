//! Randomised finite-difference checks of every layer kind and every loss.

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use super::{central_difference, FD_STEP};
use crate::aggregate_eval::softmax_objective;
use crate::losses::{
    cooc_loss, info_nce, population_spectral_loss, spectral_loss, vicreg_loss, DiscreteCooc, LossError,
    VicRegCoeffs,
};
use crate::nn::{parse_layers, LayerSpec, Mode, Model, ModelSpec, Network, NnError, Shape};
use crate::{seeded_rng, SeededRng};

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("unknown gradient check {0:?}")]
    UnknownCase(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseKind {
    Layer,
    Loss,
}

/// Every check in the suite, in run order.
pub const CASES: &[(&str, CaseKind)] = &[
    ("conv", CaseKind::Layer),
    ("dense", CaseKind::Layer),
    ("relu", CaseKind::Layer),
    ("standardize_train", CaseKind::Layer),
    ("standardize_eval", CaseKind::Layer),
    ("global_mean_pool", CaseKind::Layer),
    ("l2norm", CaseKind::Layer),
    ("network", CaseKind::Layer),
    ("spectral", CaseKind::Loss),
    ("vicreg", CaseKind::Loss),
    ("infonce", CaseKind::Loss),
    ("cooc_loss", CaseKind::Loss),
    ("population_spectral", CaseKind::Loss),
    ("softmax_objective", CaseKind::Loss),
];

/// Worst error seen for one check.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseReport {
    pub name: &'static str,
    pub kind: CaseKind,
    pub trials: usize,
    pub max_error: f64,
    pub worst_trial: usize,
}

impl CaseReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_error < tolerance
    }
}

/// `|a - n| / max(|a|, |n|, floor)` with Euclidean norms over whole vectors.
pub fn norm_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient lengths differ");
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied())
        .max(norm(&mut numeric.iter().copied()))
        .max(floor);
    diff / scale
}

const NORM_FLOOR: f64 = 1e-8;

type Scalar = Box<dyn Fn(&[f64]) -> f64>;

/// Analytic gradient and flat evaluation point of one randomised trial.
struct Trial {
    point: Vec<f64>,
    analytic: Vec<f64>,
    eval: Scalar,
}

fn gaussian(rng: &mut SeededRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn matrix(rng: &mut SeededRng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_vec((rows, cols), gaussian(rng, rows * cols)).expect("sized")
}

fn random_shape(rng: &mut SeededRng, image: bool) -> Shape {
    if image {
        Shape::image(rng.random_range(1..=3), rng.random_range(2..=6), rng.random_range(2..=6))
    } else {
        Shape::Flat(rng.random_range(1..=7))
    }
}

/// `sum(c * z)` through a model, with respect to trainable parameters and
/// the input.
fn model_trial(spec: ModelSpec, params: Vec<f64>, batch: usize, mode: Mode, rng: &mut SeededRng, keep_off_kinks: bool) -> Result<Trial, SuiteError> {
    let mut model = Model::with_params(spec.clone(), params)?;
    let width = model.input_len();
    let mut x = matrix(rng, batch, width);
    if keep_off_kinks {
        x.mapv_inplace(|v| if v.abs() < 1e-2 { v.signum() * 1e-2 + v } else { v });
    }
    let pass = model.forward(&x, mode)?;
    let c = matrix(rng, batch, pass.z.ncols());
    let dx = model.backward(pass.tape, &c, None)?;

    let trainable: Vec<usize> = model
        .params
        .slots
        .iter()
        .filter(|s| s.trainable)
        .flat_map(|s| s.range.clone())
        .collect();
    let mut analytic: Vec<f64> = trainable.iter().map(|&i| model.params.grads[i]).collect();
    analytic.extend(dx.iter());
    let mut point: Vec<f64> = trainable.iter().map(|&i| model.params.values[i]).collect();
    point.extend(x.iter());

    let base = model.params.values.clone();
    let eval = move |v: &[f64]| {
        let mut values = base.clone();
        for (k, &i) in trainable.iter().enumerate() {
            values[i] = v[k];
        }
        let m = Model::with_params(spec.clone(), values).expect("valid spec");
        let x = Array2::from_shape_vec((batch, width), v[trainable.len()..].to_vec()).expect("sized");
        let (_, z) = m.infer(&x, mode).expect("forward");
        (&z * &c).sum()
    };
    Ok(Trial {
        point,
        analytic,
        eval: Box::new(eval),
    })
}

fn layer_trial(name: &str, rng: &mut SeededRng) -> Result<Trial, SuiteError> {
    let batch = rng.random_range(1..=10);
    let (input, layers, mode) = match name {
        "conv" => {
            let input = random_shape(rng, true);
            let layer = LayerSpec::Conv {
                kernel: [1, 3, 5][rng.random_range(0..3)],
                stride: rng.random_range(1..=3),
                out_channels: rng.random_range(1..=4),
            };
            (input, vec![layer], Mode::Train)
        }
        "dense" => {
            let image = rng.random_bool(0.3);
            let input = random_shape(rng, image);
            let layer = LayerSpec::Dense {
                out_dim: rng.random_range(1..=5),
            };
            (input, vec![layer], Mode::Train)
        }
        "relu" => (random_shape(rng, false), vec![LayerSpec::Relu], Mode::Train),
        "standardize_train" => {
            let image = rng.random_bool(0.5);
            let input = random_shape(rng, image);
            (input, vec![LayerSpec::Standardize], Mode::Train)
        }
        "standardize_eval" => {
            let image = rng.random_bool(0.5);
            let input = random_shape(rng, image);
            (input, vec![LayerSpec::Standardize], Mode::Eval)
        }
        "global_mean_pool" => (random_shape(rng, true), vec![LayerSpec::GlobalMeanPool], Mode::Train),
        "l2norm" => (random_shape(rng, false), vec![LayerSpec::L2Norm], Mode::Train),
        "network" => {
            let input = Shape::image(rng.random_range(1..=2), 5, 5);
            let layers = parse_layers("conv(3,2,3),standardize,relu,global_mean_pool,dense(4),l2norm")?;
            (input, layers, Mode::Train)
        }
        other => return Err(SuiteError::UnknownCase(other.to_string())),
    };
    // Batch statistics of a single row are degenerate.
    let batch = if layers.contains(&LayerSpec::Standardize) && mode == Mode::Train {
        batch.max(2)
    } else {
        batch
    };
    let spec = ModelSpec {
        input,
        encoder: layers,
        projector: Vec::new(),
        multi_scale: false,
    };
    let len = Network::new(input, &spec.encoder, 0)?.param_len();
    let mut params = gaussian(rng, len);
    let template = Model::with_params(spec.clone(), params.clone())?;
    for slot in template.params.slots.iter().filter(|s| !s.trainable) {
        // Stored statistics: first half means, second half variances.
        let half = slot.range.len() / 2;
        for (k, i) in slot.range.clone().enumerate() {
            if k >= half {
                params[i] = rng.random_range(0.5..2.0);
            }
        }
    }
    model_trial(spec, params, batch, mode, rng, name == "relu" || name == "network")
}

fn pair_trial(
    rng: &mut SeededRng,
    batch: usize,
    dim: usize,
    loss: impl Fn(&Array2<f64>, &Array2<f64>) -> Result<(f64, Array2<f64>, Array2<f64>), LossError> + 'static,
    column_scales: bool,
) -> Result<Trial, SuiteError> {
    let scales: Vec<f64> = (0..dim)
        .map(|_| if column_scales { rng.random_range(0.3..2.0) } else { 1.0 })
        .collect();
    let scaled = |m: Array2<f64>| {
        let mut m = m;
        for (mut col, s) in m.axis_iter_mut(Axis(1)).zip(&scales) {
            col *= *s;
        }
        m
    };
    let z1 = scaled(matrix(rng, batch, dim));
    let z2 = scaled(matrix(rng, batch, dim));
    let (_, g1, g2) = loss(&z1, &z2)?;
    let point: Vec<f64> = z1.iter().chain(z2.iter()).copied().collect();
    let analytic: Vec<f64> = g1.iter().chain(g2.iter()).copied().collect();
    let n = batch * dim;
    let eval = move |v: &[f64]| {
        let a = Array2::from_shape_vec((batch, dim), v[..n].to_vec()).expect("sized");
        let b = Array2::from_shape_vec((batch, dim), v[n..].to_vec()).expect("sized");
        loss(&a, &b).expect("valid inputs").0
    };
    Ok(Trial {
        point,
        analytic,
        eval: Box::new(eval),
    })
}

fn table_trial(
    rng: &mut SeededRng,
    loss: impl Fn(&Array2<f64>, &DiscreteCooc, f64) -> Result<(f64, Array2<f64>), LossError> + 'static,
) -> Result<Trial, SuiteError> {
    let k = rng.random_range(2..=6);
    let d = rng.random_range(1..=4);
    let w = [1.0, 2.0, 4.0][rng.random_range(0..3)];
    let dc = DiscreteCooc::random(k, rng.random_bool(0.5), 0.2, rng);
    let e = matrix(rng, k, d).mapv(|v| v / (d as f64).sqrt());
    let (_, g) = loss(&e, &dc, w)?;
    let point = e.iter().copied().collect();
    let analytic = g.iter().copied().collect();
    let eval = move |v: &[f64]| {
        let e = Array2::from_shape_vec((k, d), v.to_vec()).expect("sized");
        loss(&e, &dc, w).expect("valid inputs").0
    };
    Ok(Trial {
        point,
        analytic,
        eval: Box::new(eval),
    })
}

fn loss_trial(name: &str, rng: &mut SeededRng) -> Result<Trial, SuiteError> {
    match name {
        "spectral" => {
            let lambda = rng.random_range(0.1..2.0);
            let (b, d) = (rng.random_range(2..=6), rng.random_range(1..=5));
            pair_trial(
                rng,
                b,
                d,
                move |a, b| spectral_loss(a, b, lambda).map(|o| (o.value.total, o.grad_z1, o.grad_z2)),
                false,
            )
        }
        "vicreg" => {
            let coeffs = VicRegCoeffs {
                var: rng.random_range(0.5..30.0),
                inv: rng.random_range(0.5..30.0),
                cov: rng.random_range(0.1..2.0),
            };
            let (b, d) = (rng.random_range(2..=8), rng.random_range(1..=5));
            pair_trial(
                rng,
                b,
                d,
                move |a, b| vicreg_loss(a, b, coeffs).map(|o| (o.value.total, o.grad_z1, o.grad_z2)),
                true,
            )
        }
        "infonce" => {
            let tau = rng.random_range(0.05..1.0);
            let (b, d) = (rng.random_range(2..=6), rng.random_range(2..=5));
            pair_trial(
                rng,
                b,
                d,
                move |a, b| info_nce(a, b, tau).map(|o| (o.value.total, o.grad_z1, o.grad_z2)),
                false,
            )
        }
        "cooc_loss" => table_trial(rng, |e, dc, w| cooc_loss(e, dc, w).map(|(v, g)| (v.total, g))),
        "population_spectral" => table_trial(rng, |e, dc, w| population_spectral_loss(e, dc, w / 2.0)),
        "softmax_objective" => {
            let (n, d, classes) = (rng.random_range(3..=8), rng.random_range(1..=4), rng.random_range(2..=4));
            let x = matrix(rng, n, d);
            let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..classes) as u8).collect();
            let l2 = rng.random_range(0.0..1e-2);
            let w = matrix(rng, classes, d + 1);
            let (_, g) = softmax_objective(&w, &x, &labels, l2);
            let eval = move |v: &[f64]| {
                let w = Array2::from_shape_vec((classes, d + 1), v.to_vec()).expect("sized");
                softmax_objective(&w, &x, &labels, l2).0
            };
            Ok(Trial {
                point: w.iter().copied().collect(),
                analytic: g.iter().copied().collect(),
                eval: Box::new(eval),
            })
        }
        other => Err(SuiteError::UnknownCase(other.to_string())),
    }
}

/// Runs one named check for `trials` randomised shapes. A `corrupt` check
/// has its analytic gradient perturbed before comparison.
pub fn run_case(name: &str, trials: usize, seed: u64, corrupt: bool) -> Result<CaseReport, SuiteError> {
    let (index, &(name, kind)) = CASES
        .iter()
        .enumerate()
        .find(|(_, (n, _))| *n == name)
        .ok_or_else(|| SuiteError::UnknownCase(name.to_string()))?;
    let mut rng = seeded_rng(seed, index as u64);
    let mut report = CaseReport {
        name,
        kind,
        trials,
        max_error: 0.0,
        worst_trial: 0,
    };
    for t in 0..trials {
        let mut trial = match kind {
            CaseKind::Layer => layer_trial(name, &mut rng)?,
            CaseKind::Loss => loss_trial(name, &mut rng)?,
        };
        if corrupt {
            if let Some(g) = trial.analytic.first_mut() {
                *g += 1.0 + g.abs();
            }
        }
        let numeric = central_difference(&trial.point, FD_STEP, &trial.eval);
        let err = norm_relative_error(&trial.analytic, &numeric, NORM_FLOOR);
        if err > report.max_error || err.is_nan() {
            report.max_error = if err.is_nan() { f64::INFINITY } else { err };
            report.worst_trial = t;
        }
    }
    Ok(report)
}

/// Every case in [`CASES`], corrupting the one named by `corrupt`.
pub fn run_suite(trials: usize, seed: u64, corrupt: Option<&str>) -> Result<Vec<CaseReport>, SuiteError> {
    if let Some(c) = corrupt {
        if !CASES.iter().any(|(n, _)| *n == c) {
            return Err(SuiteError::UnknownCase(c.to_string()));
        }
    }
    CASES
        .iter()
        .map(|(name, _)| run_case(name, trials, seed, corrupt == Some(*name)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::FD_TOLERANCE;

    #[test]
    fn every_case_passes_a_few_trials() {
        for r in run_suite(5, 3, None).unwrap() {
            assert!(r.passed(FD_TOLERANCE), "{} error {}", r.name, r.max_error);
        }
    }

    #[test]
    fn corruption_is_caught_and_named() {
        let reports = run_suite(2, 0, Some("conv")).unwrap();
        let failed: Vec<_> = reports.iter().filter(|r| !r.passed(FD_TOLERANCE)).map(|r| r.name).collect();
        assert_eq!(failed, ["conv"]);
        assert!(matches!(run_suite(1, 0, Some("nope")), Err(SuiteError::UnknownCase(_))));
    }

    #[test]
    fn norm_error_is_scale_free() {
        let a = [1.0, 2.0];
        let n = [1.0, 2.0 + 1e-6];
        let e = norm_relative_error(&a, &n, 1e-8);
        let scaled = norm_relative_error(&[1e3, 2e3], &[1e3, 2e3 + 1e-3], 1e-8);
        assert!((e - scaled).abs() < 1e-12);
        assert_eq!(norm_relative_error(&[0.0], &[0.0], 1e-8), 0.0);
    }
}
