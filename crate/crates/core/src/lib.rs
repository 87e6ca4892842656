pub mod baselines;
pub mod checkpoint;
pub mod data;
pub mod episode;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod head;
pub mod lstm;
pub mod metrics;
pub mod optim;
pub mod shapley;
pub mod tensor;
pub mod trainer;

pub use error::ModelError;
