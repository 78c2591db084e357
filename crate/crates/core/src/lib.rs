//! Joint-embedding self-supervised learning viewed as patch co-occurrence
//! modelling.
//!
//! The crate is split along the pipeline:
//!
//! - [`dataset_io`]: CIFAR-10 / IDX readers, fixed-scale patches, multi-scale
//!   crops and colour augmentation.
//! - [`nn`]: a small 64-bit CPU encoder/projector with explicit backward
//!   passes, SGD with warmup + cosine decay, and the checkpoint format.
//! - [`losses`]: spectral contrastive, co-occurrence factorisation, VICReg and
//!   InfoNCE objectives, plus the loss-equivalence and trace-duality verifiers.
//! - [`cooc`]: tokenised patch co-occurrence counting and direct factorisation.
//! - [`aggregate_eval`]: bag-of-patches and local aggregation, kNN and linear
//!   probes, convergence curves and locality visualisations.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregate_eval;
pub mod cooc;
pub mod dataset_io;
pub mod gradcheck;
pub mod losses;
pub mod nn;

/// Deterministic RNG used for every sampling stream in the crate.
pub type SeededRng = rand_chacha::ChaCha8Rng;

/// Creates an independent stream for `(seed, stream)`.
pub fn seeded_rng(seed: u64, stream: u64) -> SeededRng {
    use rand::SeedableRng;
    let mut rng = SeededRng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
