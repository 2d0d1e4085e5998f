use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, NasError>;

#[derive(Debug, Error)]
pub enum NasError {
    #[error("{kernel}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        kernel: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{kernel}: {msg}")]
    Kernel { kernel: &'static str, msg: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid genotype: {0}")]
    InvalidGenotype(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("missing weights for {0}")]
    MissingWeights(String),

    #[error("non-finite loss {loss} at batch {batch} (genotype {genotype})")]
    NonFiniteLoss {
        loss: f64,
        batch: usize,
        genotype: String,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("bad file format: {0}")]
    Format(String),

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl NasError {
    pub(crate) fn shape(kernel: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        NasError::Shape {
            kernel,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn kernel(kernel: &'static str, msg: impl Into<String>) -> Self {
        NasError::Kernel {
            kernel,
            msg: msg.into(),
        }
    }
}
