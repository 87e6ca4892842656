//! End-to-end run: split, standardise, group, train, evaluate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{standardize_features, Dataset, FeatureStats};
use crate::episode::{build_episodes, split_train_test, Episode, EpisodeError, SplitConfig, TestOrder};
use crate::trainer::{
    evaluate, train, train_resampled, train_traditional, EvalReport, ModelParams, RunReport, TrainConfig,
    TrainError,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Episode(#[from] EpisodeError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("dataset scores must be normalised before training")]
    NotNormalized,
    #[error("{test} test subjects cannot form an episode of size {k}")]
    TestSplit { test: usize, k: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainStrategy {
    #[default]
    Episodic,
    /// Fixed sliding windows, see [`train_traditional`].
    Traditional,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub r: f64,
    pub k: usize,
    pub hidden: usize,
    /// Number of stacked estimator layers.
    pub depth: usize,
    /// Every other seed is derived from this one.
    pub seed: u64,
    pub strategy: TrainStrategy,
    pub standardize: bool,
    pub test_order: TestOrder,
    /// Draw new episodes every epoch instead of once per run.
    pub resample_episodes: bool,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            r: 0.9,
            k: 3,
            hidden: 8,
            depth: 4,
            seed: 7,
            strategy: TrainStrategy::Episodic,
            standardize: true,
            test_order: TestOrder::Global,
            resample_episodes: false,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub split: u64,
    pub train_episodes: u64,
    pub test_episodes: u64,
    pub model: u64,
    pub batches: u64,
}

/// SplitMix64 finaliser; spreads consecutive inputs over the seed space.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Seeds {
    pub fn from_base(seed: u64) -> Self {
        Self {
            split: derive_seed(seed, 0),
            train_episodes: derive_seed(seed, 1),
            test_episodes: derive_seed(seed, 2),
            model: derive_seed(seed, 3),
            batches: derive_seed(seed, 4),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub config: ExperimentConfig,
    pub seeds: Seeds,
    pub train_subjects: Vec<u32>,
    pub test_subjects: Vec<u32>,
    /// Training-split statistics used to standardise every record.
    pub stats: Option<FeatureStats>,
    pub passthrough_features: Vec<usize>,
    pub model: ModelParams,
    pub report: RunReport,
    pub test_episodes: Vec<Episode>,
    pub test: EvalReport,
}

/// Applies the stored standardisation, if any.
pub fn prepare(ds: &Dataset, stats: Option<&FeatureStats>) -> Dataset {
    match stats {
        Some(s) => standardize_features(ds, s).0,
        None => ds.clone(),
    }
}

/// The held-out episodes of a run; `data` must already be prepared.
pub fn test_episodes(
    data: &Dataset,
    cfg: &ExperimentConfig,
    seeds: &Seeds,
    test_subjects: &[u32],
) -> Result<Vec<Episode>, EpisodeError> {
    build_episodes(test_subjects, data, cfg.k, seeds.test_episodes, cfg.test_order)
}

pub fn run_experiment(ds: &Dataset, cfg: &ExperimentConfig) -> Result<ExperimentOutcome, ExperimentError> {
    if !ds.is_normalized() {
        return Err(ExperimentError::NotNormalized);
    }
    let seeds = Seeds::from_base(cfg.seed);
    let split = SplitConfig {
        r: cfg.r,
        k: cfg.k,
        seed: seeds.split,
    };
    let (train_subjects, test_subjects) = split_train_test(&ds.subject_ids(), &split)?;
    if test_subjects.len() < cfg.k {
        return Err(ExperimentError::TestSplit {
            test: test_subjects.len(),
            k: cfg.k,
        });
    }

    let (data, stats, passthrough) = if cfg.standardize {
        let stats = FeatureStats::fit(ds, &train_subjects);
        let (data, passthrough) = standardize_features(ds, &stats);
        (data, Some(stats), passthrough)
    } else {
        (ds.clone(), None, Vec::new())
    };

    let model = ModelParams::init(data.dim(), cfg.hidden, cfg.depth, seeds.model);
    let train_cfg = TrainConfig {
        seed: seeds.batches,
        ..cfg.train
    };
    let (model, report) = match (cfg.strategy, cfg.resample_episodes) {
        (TrainStrategy::Traditional, _) => train_traditional(model, &data, &train_subjects, cfg.k, &train_cfg)?,
        (TrainStrategy::Episodic, false) => {
            let episodes = build_episodes(&train_subjects, &data, cfg.k, seeds.train_episodes, cfg.test_order)?;
            train(model, &episodes, &train_cfg)?
        }
        (TrainStrategy::Episodic, true) => train_resampled(model, &train_cfg, |epoch| {
            build_episodes(
                &train_subjects,
                &data,
                cfg.k,
                derive_seed(seeds.train_episodes, epoch as u64),
                cfg.test_order,
            )
        })?,
    };

    let test_episodes = test_episodes(&data, cfg, &seeds, &test_subjects)?;
    let test = evaluate(&model, &test_episodes, cfg.train.cv_mode)?;

    Ok(ExperimentOutcome {
        config: *cfg,
        seeds,
        train_subjects,
        test_subjects,
        stats,
        passthrough_features: passthrough,
        model,
        report,
        test_episodes,
        test,
    })
}
