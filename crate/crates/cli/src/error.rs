use bagssl_core::aggregate_eval::EvalError;
use bagssl_core::cooc::CoocError;
use bagssl_core::dataset_io::DataError;
use bagssl_core::losses::LossError;
use bagssl_core::nn::NnError;
use thiserror::Error;

/// Failure classes, each with its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, bad config, or options outside supported limits. Exit 1.
    #[error("{0}")]
    Usage(String),
    /// Unreadable or malformed input files. Exit 2.
    #[error("{0}")]
    Data(String),
    /// Non-finite values, divergence, or a failed verification. Exit 3.
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::InvalidScale { .. } | DataError::InvalidAugment(_) | DataError::Geometry(_) => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::NonFinite { .. } => CliError::Numerical(e.to_string()),
            NnError::Checkpoint(_) | NnError::Io(_) => CliError::Data(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<LossError> for CliError {
    fn from(e: LossError) -> Self {
        match e {
            LossError::TooLarge { .. } | LossError::InvalidParameter(_) | LossError::BatchTooSmall { .. } => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<CoocError> for CliError {
    fn from(e: CoocError) -> Self {
        match e {
            CoocError::Data(d) => d.into(),
            CoocError::Loss(l) => l.into(),
            CoocError::Divergence { .. } => CliError::Numerical(e.to_string()),
            CoocError::Parse { .. } | CoocError::EmptyStats => CliError::Data(e.to_string()),
            CoocError::InvalidTokenizer(_) | CoocError::InvalidArgument(_) => CliError::Usage(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Data(d) => d.into(),
            EvalError::Nn(n) => n.into(),
            EvalError::Io(io) => io.into(),
            EvalError::NonFinite(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
