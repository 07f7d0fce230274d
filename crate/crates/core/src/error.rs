use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,

    #[error("input dimension mismatch at step {step}: expected {expected}, found {found}")]
    DimensionMismatch {
        step: usize,
        expected: usize,
        found: usize,
    },

    #[error("token id {id} out of range for vocabulary of {vocab} entries")]
    TokenOutOfRange { id: u32, vocab: usize },

    #[error("sequence payload does not match the model input kind: {0}")]
    PayloadKind(&'static str),

    #[error("shape mismatch in tensor `{tensor}`: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        tensor: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("non-finite gradient in tensor `{tensor}`")]
    NonFiniteGradient { tensor: String },

    #[error("non-finite loss at epoch {epoch}, step {step} (global step {global_step})")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        global_step: u64,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("class {0} has no examples")]
    EmptyClass(u8),

    #[error("degenerate gap split: class {0} is empty after filtering")]
    DegenerateSplit(u8),

    #[error("cannot extend an empty negative example (record {0})")]
    CannotExtend(usize),

    #[error("perplexity {perplexity} infeasible for {n} points (need n >= 3 * perplexity and n <= {max})")]
    InfeasiblePerplexity { perplexity: f64, n: usize, max: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::NonFiniteGradient { .. } | Error::NonFiniteLoss { .. } => ErrorClass::Numerical,
            Error::InvalidConfig(_) | Error::InfeasiblePerplexity { .. } => ErrorClass::Usage,
            _ => ErrorClass::Data,
        }
    }
}
