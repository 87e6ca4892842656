//! Error metrics on the normalised score scale.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("metrics need at least one prediction")]
    Empty,
    #[error("{preds} predictions but {labels} labels")]
    Length { preds: usize, labels: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Mean absolute error in points out of 100.
    pub mae: f64,
    /// Population standard deviation of the absolute errors, normalised scale.
    pub sd: f64,
    pub count: usize,
}

impl MetricReport {
    pub fn compute(preds: &[f64], labels: &[f64]) -> Result<Self, MetricError> {
        Ok(Self {
            mae: mae(preds, labels)?,
            sd: sd_abs_errors(preds, labels)?,
            count: preds.len(),
        })
    }
}

fn abs_errors(preds: &[f64], labels: &[f64]) -> Result<Vec<f64>, MetricError> {
    if preds.len() != labels.len() {
        return Err(MetricError::Length {
            preds: preds.len(),
            labels: labels.len(),
        });
    }
    if preds.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(preds.iter().zip(labels).map(|(p, y)| (y - p).abs()).collect())
}

/// `mean |y - y*| · 100`.
pub fn mae(preds: &[f64], labels: &[f64]) -> Result<f64, MetricError> {
    let e = abs_errors(preds, labels)?;
    Ok(e.iter().sum::<f64>() / e.len() as f64 * 100.0)
}

pub fn sd_abs_errors(preds: &[f64], labels: &[f64]) -> Result<f64, MetricError> {
    let e = abs_errors(preds, labels)?;
    let n = e.len() as f64;
    let mean = e.iter().sum::<f64>() / n;
    Ok((e.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt())
}
