//! Discrete co-occurrence path: tokenize patches, count which tokens appear
//! together in the same image, and factorize the resulting ratio matrix.

mod factorize;
mod stats;
mod tokenizer;

pub use factorize::{factorize, factorize_from, planted_instance, EmbeddingTable, FactorizeResult};
pub use stats::{count_cooc, ratio_matrix, CoocStats};
pub use tokenizer::{average_pool, Tokenizer};

use thiserror::Error;

use crate::dataset_io::DataError;
use crate::losses::LossError;

#[derive(Debug, Error)]
pub enum CoocError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("invalid tokenizer: {0}")]
    InvalidTokenizer(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("co-occurrence statistics are empty")]
    EmptyStats,
    #[error("factorization diverged at step {step}")]
    Divergence { step: usize },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}
