//! Central finite differences for checking analytic gradients.
//!
//! Deliberately knows nothing about the engine: callers pass a closure that
//! evaluates a scalar at a perturbed point. [`suite`] applies them to every
//! layer kind and loss.

mod suite;

pub use suite::{norm_relative_error, run_case, run_suite, CaseKind, CaseReport, SuiteError, CASES};

/// Default perturbation for 64-bit checks.
pub const FD_STEP: f64 = 1e-5;
/// Relative error accepted between analytic and numeric gradients.
pub const FD_TOLERANCE: f64 = 1e-4;

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate `i`.
pub fn central_difference<F>(x: &[f64], step: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let up = f(&probe);
            probe[i] = orig - step;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|, floor)`. The floor keeps near-zero gradients
/// from being judged on rounding noise alone.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest [`relative_error`] over paired entries, with its index.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> (f64, usize) {
    assert_eq!(analytic.len(), numeric.len(), "gradient lengths differ");
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n, floor))
        .enumerate()
        .fold((0.0, 0), |(best, bi), (i, e)| if e > best { (e, i) } else { (best, bi) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_derivative() {
        let g = central_difference(&[1.0, -2.0], FD_STEP, |v| v[0].powi(3) + 2.0 * v[1] * v[0]);
        assert!((g[0] - (3.0 - 4.0)).abs() < 1e-8);
        assert!((g[1] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0, 1e-8), 0.0);
        assert!(relative_error(1e-12, 2e-12, 1e-6) < 1e-5);
        assert!((relative_error(1.0, 1.1, 1e-8) - 0.1 / 1.1).abs() < 1e-12);
    }
}
