use thiserror::Error;

use crate::tensor::TensorError;

/// Errors raised while assembling or evaluating the embedding/estimation model.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("episode has no members")]
    EmptyEpisode,
    #[error("support set is empty")]
    EmptySupport,
    #[error("{what}: expected {expected}, found {found}")]
    Shape {
        what: &'static str,
        expected: String,
        found: String,
    },
    #[error("loss needs equal, non-zero lengths (predictions {preds}, labels {labels})")]
    Loss { preds: usize, labels: usize },
}

impl ModelError {
    pub(crate) fn shape(what: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Self::Shape {
            what,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
