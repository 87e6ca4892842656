//! Classical linear baselines and participant-level cross-validation.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, SubjectRecord};
use crate::metrics::{MetricError, MetricReport};

/// Added to the diagonal of the normal equations.
pub const RIDGE_JITTER: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BaselineError {
    #[error("system is singular even after jitter")]
    Singular,
    #[error("need at least {needed} samples, got {found}")]
    TooFewSamples { needed: usize, found: usize },
    #[error("row {row} has {found} columns, expected {expected}")]
    Ragged { row: usize, expected: usize, found: usize },
    #[error("{found} participants cannot fill {folds} folds")]
    Scheme { folds: usize, found: usize },
    #[error(transparent)]
    Metric(#[from] MetricError),
}

fn to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, BaselineError> {
    let cols = rows.first().map_or(0, Vec::len);
    for (i, r) in rows.iter().enumerate() {
        if r.len() != cols {
            return Err(BaselineError::Ragged {
                row: i,
                expected: cols,
                found: r.len(),
            });
        }
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

/// Minimises `‖X c − y‖²` through the normal equations. `x` should already
/// contain an intercept column if one is wanted.
pub fn least_squares_fit(x: &[Vec<f64>], y: &[f64]) -> Result<Vec<f64>, BaselineError> {
    let a = to_matrix(x)?;
    if a.nrows() != y.len() || a.nrows() < a.ncols() {
        return Err(BaselineError::TooFewSamples {
            needed: a.ncols().max(y.len()),
            found: a.nrows(),
        });
    }
    let b = DVector::from_column_slice(y);
    let mut gram = a.transpose() * &a;
    for i in 0..gram.nrows() {
        gram[(i, i)] += RIDGE_JITTER;
    }
    let rhs = a.transpose() * b;
    let chol = gram.cholesky().ok_or(BaselineError::Singular)?;
    let c = chol.solve(&rhs);
    if c.iter().all(|v| v.is_finite()) {
        Ok(c.iter().copied().collect())
    } else {
        Err(BaselineError::Singular)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesianRidgeFit {
    pub coef: Vec<f64>,
    pub intercept: f64,
    pub noise_precision: f64,
    pub weight_precision: f64,
    pub iterations: usize,
    /// False when `max_iter` ran out first; the last iterate is returned.
    pub converged: bool,
}

// Weak gamma hyperpriors on both precisions keep the updates finite when the
// residual or the coefficients vanish.
const HYPER: f64 = 1e-6;

/// Bayesian linear regression with evidence maximisation. `x` must not hold an
/// intercept column; the intercept comes from centring.
pub fn bayesian_ridge_fit(
    x: &[Vec<f64>],
    y: &[f64],
    max_iter: usize,
    tol: f64,
) -> Result<BayesianRidgeFit, BaselineError> {
    let a = to_matrix(x)?;
    let (n, d) = (a.nrows(), a.ncols());
    if n < 2 || n != y.len() {
        return Err(BaselineError::TooFewSamples { needed: 2, found: n });
    }
    let x_mean: Vec<f64> = (0..d).map(|j| a.column(j).mean()).collect();
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let centred = DMatrix::from_fn(n, d, |i, j| a[(i, j)] - x_mean[j]);
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));

    let svd = centred.clone().svd(true, true);
    let (u, vt) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let s = svd.singular_values;
    let eig: Vec<f64> = s.iter().map(|v| v * v).collect();
    let uty = u.transpose() * &yc;

    let var_y = yc.norm_squared() / n as f64;
    let mut noise = 1.0 / (var_y + f64::EPSILON);
    let mut weight = 1.0;
    // posterior mean for the given precisions
    let posterior = |noise: f64, weight: f64| -> DVector<f64> {
        let scaled = DVector::from_iterator(
            s.len(),
            (0..s.len()).map(|i| noise * s[i] * uty[i] / (noise * eig[i] + weight)),
        );
        vt.transpose() * scaled
    };
    let mut iterations = 0;
    let mut converged = false;

    while iterations < max_iter {
        iterations += 1;
        let coef = posterior(noise, weight);
        let resid = (&centred * &coef - &yc).norm_squared();
        let gamma: f64 = eig.iter().map(|e| noise * e / (noise * e + weight)).sum();
        let new_weight = (gamma + 2.0 * HYPER) / (coef.norm_squared() + 2.0 * HYPER);
        let new_noise = (n as f64 - gamma + 2.0 * HYPER) / (resid + 2.0 * HYPER);
        let change = ((new_weight - weight).abs() / weight).max((new_noise - noise).abs() / noise);
        weight = new_weight;
        noise = new_noise;
        if change < tol {
            converged = true;
            break;
        }
    }
    let coef = posterior(noise, weight);
    let intercept = y_mean - coef.iter().zip(&x_mean).map(|(c, m)| c * m).sum::<f64>();
    Ok(BayesianRidgeFit {
        coef: coef.iter().copied().collect(),
        intercept,
        noise_precision: noise,
        weight_precision: weight,
        iterations,
        converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    LeastSquares,
    BayesianRidge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CvScheme {
    KFold(usize),
    LeaveOneOut,
}

/// A fitted linear predictor on raw features. Features are z-scored with the
/// fit-set statistics before solving, which keeps the normal equations well
/// conditioned without changing the least-squares solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub coef: Vec<f64>,
    pub intercept: f64,
}

impl LinearModel {
    pub fn predict(&self, features: &[f64]) -> f64 {
        self.intercept
            + features
                .iter()
                .zip(&self.mean)
                .zip(&self.scale)
                .zip(&self.coef)
                .map(|(((x, m), s), c)| c * (x - m) / s)
                .sum::<f64>()
    }
}

impl Baseline {
    pub fn fit(self, records: &[&SubjectRecord]) -> Result<LinearModel, BaselineError> {
        let d = records.first().map_or(0, |r| r.features.len());
        let n = records.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| records.iter().map(|r| r.features[j]).sum::<f64>() / n).collect();
        let scale: Vec<f64> = (0..d)
            .map(|j| {
                let v = records.iter().map(|r| (r.features[j] - mean[j]).powi(2)).sum::<f64>() / n;
                if v.sqrt() < 1e-12 {
                    1.0
                } else {
                    v.sqrt()
                }
            })
            .collect();
        let z: Vec<Vec<f64>> = records
            .iter()
            .map(|r| (0..d).map(|j| (r.features[j] - mean[j]) / scale[j]).collect())
            .collect();
        let y: Vec<f64> = records.iter().map(|r| r.score).collect();
        let (coef, intercept) = match self {
            Baseline::LeastSquares => {
                let with_one: Vec<Vec<f64>> = z
                    .iter()
                    .map(|row| row.iter().copied().chain(std::iter::once(1.0)).collect())
                    .collect();
                let mut c = least_squares_fit(&with_one, &y)?;
                let b = c.pop().expect("intercept column");
                (c, b)
            }
            Baseline::BayesianRidge => {
                let fit = bayesian_ridge_fit(&z, &y, 300, 1e-3)?;
                (fit.coef, fit.intercept)
            }
        };
        Ok(LinearModel {
            mean,
            scale,
            coef,
            intercept,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValReport {
    pub metrics: MetricReport,
    /// Held-out participants per fit.
    pub folds: Vec<Vec<u32>>,
}

/// Splits participants into `folds` seeded groups whose sizes differ by at
/// most one.
pub fn participant_folds(subjects: &[u32], folds: usize, seed: u64) -> Result<Vec<Vec<u32>>, BaselineError> {
    if folds < 2 || subjects.len() < folds {
        return Err(BaselineError::Scheme {
            folds,
            found: subjects.len(),
        });
    }
    let mut ids = subjects.to_vec();
    ids.sort_unstable();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (ids.len() / folds, ids.len() % folds);
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for f in 0..folds {
        let len = base + usize::from(f < extra);
        let mut group = ids[start..start + len].to_vec();
        group.sort_unstable();
        out.push(group);
        start += len;
    }
    Ok(out)
}

/// Fits on all other participants and predicts every record of the held-out
/// ones, then pools the errors over all folds.
pub fn crossval_eval(
    baseline: Baseline,
    ds: &Dataset,
    scheme: CvScheme,
    seed: u64,
) -> Result<CrossValReport, BaselineError> {
    let subjects = ds.subject_ids();
    let folds = match scheme {
        CvScheme::KFold(f) => participant_folds(&subjects, f, seed)?,
        CvScheme::LeaveOneOut => {
            if subjects.len() < 2 {
                return Err(BaselineError::Scheme {
                    folds: subjects.len().max(2),
                    found: subjects.len(),
                });
            }
            subjects.iter().map(|&s| vec![s]).collect()
        }
    };
    let mut preds = Vec::new();
    let mut labels = Vec::new();
    for held in &folds {
        let fit_set: Vec<&SubjectRecord> = ds.records().filter(|r| !held.contains(&r.subject_id)).collect();
        let model = baseline.fit(&fit_set)?;
        for r in ds.records().filter(|r| held.contains(&r.subject_id)) {
            preds.push(model.predict(&r.features));
            labels.push(r.score);
        }
    }
    Ok(CrossValReport {
        metrics: MetricReport::compute(&preds, &labels)?,
        folds,
    })
}
