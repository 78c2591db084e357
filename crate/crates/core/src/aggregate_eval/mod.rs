//! Turning patch embeddings into image representations and scoring them.
//!
//! Patches are embedded without augmentation. An image is represented by
//! the mean of its patch vectors (bag) or by a coarse grid of pooled cells
//! (local). Representations are scored with cosine kNN or a linear probe,
//! and the figure helpers produce similarity heatmaps and patch neighbours.

mod aggregate;
mod classify;
mod convergence;
mod embed;
mod figures;

pub use aggregate::{bag_aggregate, local_aggregate};
pub use classify::{
    knn_eval, knn_predict, linear_probe, softmax_objective, standardize_features, ProbeConfig,
    ProbeResult,
};
pub use convergence::{convergence_curve, ConvergencePoint, Reference};
pub use embed::{
    embed_at, embed_dataset, embed_patches, grid_positions, patch_positions, stride_positions,
    Positions,
};
pub use figures::{
    gray_levels, heatmap, patch_knn_dump, read_embedding_dump, write_embedding_dump,
    write_neighbor_manifest, write_pgm, write_tiles, HeatmapPair, Neighbor, NeighborTag,
    SimilarityGrid,
};

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::dataset_io::DataError;
use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("{0} is empty")]
    Empty(&'static str),
    #[error("records mix image ids {0} and {1}")]
    MixedImages(usize, usize),
    #[error("records mix embedding and projection vectors")]
    MixedSpaces,
    #[error("incomplete grid: {0}")]
    IncompleteGrid(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("k = {k} is invalid for a corpus of {corpus}")]
    InvalidK { k: usize, corpus: usize },
    #[error("need at least two classes, found {0}")]
    SingleClass(usize),
    #[error("{0}")]
    Unsupported(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which model output a vector comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Space {
    /// Encoder output `h`.
    Embedding,
    /// Projector output `z`.
    Projection,
}

impl Space {
    pub fn code(self) -> u8 {
        match self {
            Space::Embedding => 0,
            Space::Projection => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Space::Embedding),
            1 => Some(Space::Projection),
            _ => None,
        }
    }
}

impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Space::Embedding => "embedding",
            Space::Projection => "projection",
        })
    }
}

impl FromStr for Space {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "embedding" => Ok(Space::Embedding),
            "projection" => Ok(Space::Projection),
            other => Err(format!("unknown space {other:?}")),
        }
    }
}

/// One patch vector and where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub image_id: usize,
    pub x: usize,
    pub y: usize,
    pub space: Space,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Central,
    BagMean(usize),
    LocalConcat {
        rows: usize,
        cols: usize,
        window: usize,
        stride: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRepresentation {
    pub image_id: usize,
    pub vector: Vec<f64>,
    pub method: Method,
}

/// `a . b / sqrt(|a|^2 |b|^2)`, clamped to `[-1, 1]`; 0 if either is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return 0.0;
    }
    (ab / (aa * bb).sqrt()).clamp(-1.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_of_self_is_exactly_one() {
        let v = [0.3, -1.7, 2.2e-3, 9.1];
        assert_eq!(cosine(&v, &v), 1.0);
        assert_eq!(cosine(&v, &[0.0; 4]), 0.0);
        let w: Vec<f64> = v.iter().map(|x| -x).collect();
        assert_eq!(cosine(&v, &w), -1.0);
    }

    #[test]
    fn space_codes_round_trip() {
        for s in [Space::Embedding, Space::Projection] {
            assert_eq!(Space::from_code(s.code()), Some(s));
            assert_eq!(s.to_string().parse::<Space>(), Ok(s));
        }
    }
}
