pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod evolution;
pub mod metrics;
pub mod network;
pub mod operators;
pub mod optim;
pub mod rank_eval;
pub mod sampler;
pub mod search_space;
pub mod tensor;
pub mod trainer;

pub use error::{NasError, Result};
