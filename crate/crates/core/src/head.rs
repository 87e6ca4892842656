//! Linear-regression prediction and the mean-squared-error training loss.

use crate::error::ModelError;
use crate::estimator::{RegressionParams, TapeRegression};
use crate::tensor::{Tape, Var};

/// `w · z + beta`, recorded on the tape.
pub fn predict(tape: &mut Tape, params: TapeRegression, z: Var) -> Result<Var, ModelError> {
    let wz = tape.dot(params.w, z)?;
    Ok(tape.add(wz, params.beta)?)
}

/// Plain-value prediction.
pub fn predict_plain(params: &RegressionParams, z: &[f64]) -> Result<f64, ModelError> {
    if params.w.len() != z.len() {
        return Err(ModelError::shape("prediction input", params.w.len(), z.len()));
    }
    Ok(params.w.iter().zip(z).map(|(w, z)| w * z).sum::<f64>() + params.beta)
}

/// `(1/n) Σ (y_i − y*_i)²` over a batch of rank-0 predictions.
pub fn mse_loss(tape: &mut Tape, preds: &[Var], labels: &[f64]) -> Result<Var, ModelError> {
    if preds.is_empty() || preds.len() != labels.len() {
        return Err(ModelError::Loss {
            preds: preds.len(),
            labels: labels.len(),
        });
    }
    let mut total: Option<Var> = None;
    for (&p, &y) in preds.iter().zip(labels) {
        let label = tape.constant(y);
        let r = tape.sub(label, p)?;
        let sq = tape.hadamard(r, r)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, sq)?,
            None => sq,
        });
    }
    let total = total.expect("batch is non-empty");
    Ok(tape.scale(total, 1.0 / preds.len() as f64)?)
}

/// Plain-value MSE, used for reporting.
pub fn mse(preds: &[f64], labels: &[f64]) -> Result<f64, ModelError> {
    if preds.is_empty() || preds.len() != labels.len() {
        return Err(ModelError::Loss {
            preds: preds.len(),
            labels: labels.len(),
        });
    }
    let sum: f64 = preds.iter().zip(labels).map(|(p, y)| (y - p).powi(2)).sum();
    Ok(sum / preds.len() as f64)
}
