//! Training objectives and the two algebraic verifiers.
//!
//! Batch losses take two `B x d` projection matrices (one row per view) and
//! return the value with exact gradients for both inputs.

mod cooc_loss;
mod duality;
mod infonce;
mod prop1;
mod spectral;
mod vicreg;

pub use cooc_loss::cooc_loss;
pub use duality::{duality_check, DualityReport};
pub use infonce::{info_nce, DEFAULT_TEMPERATURE};
pub use prop1::{
    population_spectral_loss, prop1_verify, prop1_verify_tables, Prop1Report, MAX_ENUM_DIM,
    MAX_ENUM_VOCAB,
};
pub use spectral::{spectral_loss, DEFAULT_LAMBDA};
pub use vicreg::{vicreg_loss, VicRegCoeffs, VICREG_STD_EPS};

use std::fmt;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("batch of {batch} rows has no negative pairs; need at least 2")]
    BatchTooSmall { batch: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid co-occurrence distribution: {0}")]
    InvalidDistribution(String),
    #[error("exact enumeration limited to K <= {max_k}, d <= {max_d}; got K = {k}, d = {d}")]
    TooLarge {
        k: usize,
        d: usize,
        max_k: usize,
        max_d: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossComponent {
    pub name: &'static str,
    pub value: f64,
    pub weight: f64,
}

/// A loss total and the weighted terms it is made of.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub components: Vec<LossComponent>,
}

impl LossValue {
    pub(crate) fn from_components(components: Vec<LossComponent>) -> Self {
        let total = components.iter().map(|c| c.weight * c.value).sum();
        Self { total, components }
    }

    pub fn component(&self, name: &str) -> Option<f64> {
        self.components.iter().find(|c| c.name == name).map(|c| c.value)
    }

    /// `sum(weight * value)` over the components.
    pub fn recombined(&self) -> f64 {
        self.components.iter().map(|c| c.weight * c.value).sum()
    }
}

/// Loss value with gradients with respect to both views.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub value: LossValue,
    pub grad_z1: Array2<f64>,
    pub grad_z2: Array2<f64>,
}

pub(crate) fn check_pair(z1: &Array2<f64>, z2: &Array2<f64>) -> Result<usize, LossError> {
    if z1.dim() != z2.dim() {
        return Err(LossError::Shape(format!(
            "views have shapes {:?} and {:?}",
            z1.dim(),
            z2.dim()
        )));
    }
    if z1.nrows() < 2 {
        return Err(LossError::BatchTooSmall { batch: z1.nrows() });
    }
    Ok(z1.nrows())
}

/// Joint distribution of two tokens over a finite vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteCooc {
    pub joint: Array2<f64>,
    /// Row sums of `joint`.
    pub p1: Array1<f64>,
    /// Column sums of `joint`.
    pub p2: Array1<f64>,
}

impl DiscreteCooc {
    pub fn new(joint: Array2<f64>) -> Result<Self, LossError> {
        if joint.nrows() != joint.ncols() || joint.is_empty() {
            return Err(LossError::InvalidDistribution(format!(
                "joint must be square and non-empty, got {:?}",
                joint.dim()
            )));
        }
        if joint.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(LossError::InvalidDistribution(
                "joint has negative or non-finite entries".into(),
            ));
        }
        let total = joint.sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(LossError::InvalidDistribution(format!(
                "joint sums to {total}, not 1"
            )));
        }
        let p1 = joint.sum_axis(Axis(1));
        let p2 = joint.sum_axis(Axis(0));
        Ok(Self { joint, p1, p2 })
    }

    pub fn vocab_size(&self) -> usize {
        self.joint.nrows()
    }

    /// `joint(i, j) / (p1(i) p2(j))`, with 0 where the product vanishes.
    pub fn ratio(&self, i: usize, j: usize) -> f64 {
        let w = self.p1[i] * self.p2[j];
        if w > 0.0 {
            self.joint[[i, j]] / w
        } else {
            0.0
        }
    }

    /// A random distribution on `k` tokens. Roughly `zero_fraction` of the
    /// entries are exactly zero; `symmetric` mirrors the joint.
    pub fn random<R: Rng + ?Sized>(
        k: usize,
        symmetric: bool,
        zero_fraction: f64,
        rng: &mut R,
    ) -> Self {
        let mut joint = Array2::from_shape_fn((k, k), |_| {
            if rng.random::<f64>() < zero_fraction {
                0.0
            } else {
                rng.random::<f64>().powi(2) + 1e-3
            }
        });
        if symmetric {
            joint = &joint + &joint.t();
        }
        if joint.sum() == 0.0 {
            joint[[0, 0]] = 1.0;
        }
        let s = joint.sum();
        joint.mapv_inplace(|v| v / s);
        Self::new(joint).expect("constructed distribution is valid")
    }
}

/// The objective used for joint-embedding pretraining.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    Spectral { lambda: f64 },
    VicReg(VicRegCoeffs),
    InfoNce { temperature: f64 },
}

impl Objective {
    pub fn evaluate(&self, z1: &Array2<f64>, z2: &Array2<f64>) -> Result<LossOutput, LossError> {
        match *self {
            Objective::Spectral { lambda } => spectral_loss(z1, z2, lambda),
            Objective::VicReg(c) => vicreg_loss(z1, z2, c),
            Objective::InfoNce { temperature } => info_nce(z1, z2, temperature),
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Objective::Spectral { lambda } => write!(f, "spectral(lambda={lambda})"),
            Objective::VicReg(c) => write!(f, "vicreg(var={},inv={},cov={})", c.var, c.inv, c.cov),
            Objective::InfoNce { temperature } => write!(f, "infonce(tau={temperature})"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn distribution_validation() {
        assert!(DiscreteCooc::new(array![[0.5, 0.2], [0.1, 0.1]]).is_err());
        assert!(DiscreteCooc::new(array![[0.5, -0.1], [0.5, 0.1]]).is_err());
        assert!(DiscreteCooc::new(array![[0.5, 0.5]]).is_err());
        let dc = DiscreteCooc::new(array![[0.4, 0.1], [0.1, 0.4]]).unwrap();
        assert_eq!(dc.p1, dc.p2);
        assert!((dc.ratio(0, 0) - 1.6).abs() < 1e-12);
    }

    #[test]
    fn random_symmetric_has_equal_marginals() {
        let mut rng = crate::seeded_rng(4, 0);
        let dc = DiscreteCooc::random(7, true, 0.3, &mut rng);
        assert!((dc.joint.sum() - 1.0).abs() < 1e-12);
        for (a, b) in dc.p1.iter().zip(dc.p2.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
