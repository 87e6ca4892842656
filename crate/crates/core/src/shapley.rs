//! Feature attribution by Monte Carlo permutation sampling.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::experiment::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    /// Mean over evaluation points of `|phi_j|`.
    pub mean_abs: Vec<f64>,
    /// Signed estimates, one row per evaluation point.
    pub values: Vec<Vec<f64>>,
    pub samples: usize,
    pub seed: u64,
}

/// Shapley estimates for one point. Each sample draws a feature permutation
/// and a background row, then switches features from the background to `x`
/// in permutation order and credits each switch with the change in `f`.
///
/// Background rows are drawn in reshuffled passes over the whole set rather
/// than independently, so the attributions sum to `f(x)` minus the background
/// mean of `f` up to the last incomplete pass.
pub fn shapley_point<F>(f: &F, x: &[f64], background: &[Vec<f64>], samples: usize, seed: u64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64 + ?Sized,
{
    assert!(samples >= 1, "need at least one permutation sample");
    assert!(!background.is_empty(), "background set is empty");
    let d = x.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut phi = vec![0.0; d];
    let mut order: Vec<usize> = (0..d).collect();
    let mut rows: Vec<usize> = (0..background.len()).collect();
    for s in 0..samples {
        let pass_pos = s % rows.len();
        if pass_pos == 0 {
            rows.shuffle(&mut rng);
        }
        order.shuffle(&mut rng);
        let mut z = background[rows[pass_pos]].clone();
        let mut prev = f(&z);
        for &j in &order {
            z[j] = x[j];
            let cur = f(&z);
            phi[j] += cur - prev;
            prev = cur;
        }
    }
    phi.iter_mut().for_each(|p| *p /= samples as f64);
    phi
}

/// Attributions for every evaluation point; point `i` uses a seed derived
/// from `(seed, i)`.
pub fn shapley_impact<F>(
    f: &F,
    points: &[Vec<f64>],
    background: &[Vec<f64>],
    samples: usize,
    seed: u64,
) -> AttributionReport
where
    F: Fn(&[f64]) -> f64 + ?Sized,
{
    let values: Vec<Vec<f64>> = points
        .iter()
        .enumerate()
        .map(|(i, x)| shapley_point(f, x, background, samples, derive_seed(seed, i as u64)))
        .collect();
    summarize(values, samples, seed)
}

/// Like [`shapley_impact`], but every point brings its own predictor, e.g.
/// one model under different support sets.
pub fn shapley_impact_each<F>(points: &[(F, Vec<f64>)], background: &[Vec<f64>], samples: usize, seed: u64) -> AttributionReport
where
    F: Fn(&[f64]) -> f64,
{
    let values: Vec<Vec<f64>> = points
        .iter()
        .enumerate()
        .map(|(i, (f, x))| shapley_point(f, x, background, samples, derive_seed(seed, i as u64)))
        .collect();
    summarize(values, samples, seed)
}

fn summarize(values: Vec<Vec<f64>>, samples: usize, seed: u64) -> AttributionReport {
    let d = values.first().map_or(0, Vec::len);
    let n = values.len().max(1) as f64;
    let mean_abs = (0..d).map(|j| values.iter().map(|v| v[j].abs()).sum::<f64>() / n).collect();
    AttributionReport {
        mean_abs,
        values,
        samples,
        seed,
    }
}

/// Feature indices ordered by decreasing mean |phi|.
pub fn ranking(report: &AttributionReport) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..report.mean_abs.len()).collect();
    idx.sort_by(|&a, &b| report.mean_abs[b].total_cmp(&report.mean_abs[a]).then(a.cmp(&b)));
    idx
}
