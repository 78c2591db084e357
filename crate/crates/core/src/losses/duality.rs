use ndarray::{Array2, ArrayView2};

/// Both sides of `||Z^T Z - I_d||_F^2 - ||Z Z^T - I_N||_F^2 = d - N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualityReport {
    /// `||Z^T Z - I_d||_F^2`.
    pub lhs: f64,
    /// `||Z Z^T - I_N||_F^2`.
    pub rhs: f64,
    pub gap: f64,
    /// `d - N`.
    pub expected: f64,
    /// `|gap - expected| / max(1, lhs, rhs)`.
    pub relative_error: f64,
}

fn frob_sq_minus_identity(g: &Array2<f64>) -> f64 {
    g.indexed_iter()
        .map(|((i, j), &v)| {
            let x = if i == j { v - 1.0 } else { v };
            x * x
        })
        .sum()
}

/// Evaluates both Gram-matrix forms for an `N x d` matrix.
pub fn duality_check(z: ArrayView2<'_, f64>) -> DualityReport {
    let (n, d) = z.dim();
    let lhs = frob_sq_minus_identity(&z.t().dot(&z));
    let rhs = frob_sq_minus_identity(&z.dot(&z.t()));
    let gap = lhs - rhs;
    let expected = d as f64 - n as f64;
    DualityReport {
        lhs,
        rhs,
        gap,
        expected,
        relative_error: (gap - expected).abs() / lhs.max(rhs).max(1.0),
    }
}
