//! Exact checks with pass/fail thresholds.

use std::fmt::Write as _;

use bagssl_core::gradcheck::{run_suite, FD_TOLERANCE};
use bagssl_core::losses::{duality_check, prop1_verify, DiscreteCooc};
use bagssl_core::{seeded_rng, SeededRng};
use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{CliError, CliResult};

pub const PROP1_TOLERANCE: f64 = 1e-10;
pub const DUALITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prop1Options {
    pub vocab: usize,
    pub dim: usize,
    pub w: f64,
    pub trials: usize,
    pub instances: usize,
}

impl Default for Prop1Options {
    fn default() -> Self {
        Self {
            vocab: 4,
            dim: 2,
            w: 2.0,
            trials: 10,
            instances: 1,
        }
    }
}

/// Every measured value, plus the names of the checks that failed.
#[derive(Debug, Clone, Default)]
pub struct VerifyReport {
    pub text: String,
    pub failures: Vec<String>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    /// `Err` naming every failed check when any failed.
    pub fn into_result(self) -> CliResult<Self> {
        if self.passed() {
            Ok(self)
        } else {
            Err(CliError::Numerical(format!("verification failed: {}", self.failures.join(", "))))
        }
    }

    fn line(&mut self, name: String, values: String, ok: bool) {
        writeln!(self.text, "{} {name} {values}", if ok { "PASS" } else { "FAIL" }).unwrap();
        if !ok {
            self.failures.push(name);
        }
    }
}

/// Compares the co-occurrence and population spectral objectives on random
/// distributions.
pub fn prop1(opts: Prop1Options, seed: u64) -> CliResult<VerifyReport> {
    let mut rng = seeded_rng(seed, 30);
    let mut report = VerifyReport::default();
    for i in 0..opts.instances {
        let dc = DiscreteCooc::random(opts.vocab, i % 2 == 1, 0.1, &mut rng);
        let r = prop1_verify(&dc, opts.w, opts.dim, opts.trials, &mut rng)?;
        let ok = r.max_gap_deviation < PROP1_TOLERANCE && r.max_grad_deviation < PROP1_TOLERANCE;
        report.line(
            format!("prop1[{i}]"),
            format!(
                "K={} d={} w={} lambda={} gap={:.12e} expected_gap={:.12e} gap_dev={:.3e} grad_dev={:.3e}",
                opts.vocab, opts.dim, r.w, r.lambda, r.median_gap, r.expected_gap, r.max_gap_deviation, r.max_grad_deviation
            ),
            ok,
        );
    }
    Ok(report)
}

fn gaussian_matrix(rng: &mut SeededRng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

/// The Gram-matrix identity on `matrices` random shapes up to `max_side`.
pub fn duality(matrices: usize, max_side: usize, seed: u64) -> CliResult<VerifyReport> {
    if max_side == 0 {
        return Err(CliError::Usage("max side must be at least 1".into()));
    }
    let mut rng = seeded_rng(seed, 31);
    let mut report = VerifyReport::default();
    for i in 0..matrices {
        let (n, d) = (rng.random_range(1..=max_side), rng.random_range(1..=max_side));
        let z = gaussian_matrix(&mut rng, n, d);
        let r = duality_check(z.view());
        report.line(
            format!("duality[{i}]"),
            format!(
                "N={n} d={d} gap={:.12e} expected={} rel_err={:.3e}",
                r.gap, r.expected, r.relative_error
            ),
            r.relative_error < DUALITY_TOLERANCE,
        );
    }
    Ok(report)
}

/// Finite-difference checks of every layer kind and loss; `corrupt` names a
/// check whose analytic gradient is deliberately broken.
pub fn gradcheck(trials: usize, seed: u64, corrupt: Option<&str>) -> CliResult<VerifyReport> {
    let reports = run_suite(trials, seed, corrupt).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut report = VerifyReport::default();
    for r in reports {
        report.line(
            r.name.to_string(),
            format!("trials={} max_rel_err={:.3e} worst_trial={}", r.trials, r.max_error, r.worst_trial),
            r.passed(FD_TOLERANCE),
        );
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_checks_pass() {
        assert!(prop1(Prop1Options::default(), 0).unwrap().passed());
        assert!(duality(20, 40, 0).unwrap().passed());
    }

    #[test]
    fn corrupted_layer_is_named() {
        let err = gradcheck(2, 0, Some("dense")).unwrap().into_result().unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("dense"));
    }

    #[test]
    fn enumeration_limit_is_a_usage_error() {
        let opts = Prop1Options {
            vocab: 64,
            ..Prop1Options::default()
        };
        assert_eq!(prop1(opts, 0).unwrap_err().exit_code(), 1);
    }
}
