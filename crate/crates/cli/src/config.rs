//! Flag / config-file merging. A flag always beats the file; the file beats
//! built-in defaults. The out-dir environment variable only replaces the
//! built-in default.

use std::path::{Path, PathBuf};

use fewshot_core::experiment::{ExperimentConfig, TrainStrategy};
use fewshot_core::trainer::CvMode;
use serde::{Deserialize, Serialize};

use crate::args::{Common, RunFlags};
use crate::error::CliError;

pub const OUT_DIR_ENV: &str = "FEWSHOT_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "fewshot-out";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub r: Option<f64>,
    pub k: Option<usize>,
    pub l: Option<usize>,
    pub hidden: Option<usize>,
    pub features: Option<usize>,
    pub cv_mode: Option<CvMode>,
    pub train_strategy: Option<TrainStrategy>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub batch: Option<usize>,
    pub k_values: Option<Vec<usize>>,
    pub samples: Option<usize>,
    pub subjects: Option<usize>,
    pub tests: Option<usize>,
    pub noise: Option<f64>,
    pub nonlinearity: Option<f64>,
    pub group_block: Option<usize>,
    pub group_strength: Option<f64>,
    pub output: Option<String>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("config file {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::usage(format!("config file {}: {e}", path.display())))
    }
}

pub fn out_dir(common: &Common, file: &FileConfig) -> PathBuf {
    common
        .out_dir
        .clone()
        .or_else(|| file.out_dir.clone())
        .or_else(|| std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

pub fn check_features(features: Option<usize>) -> Result<Option<usize>, CliError> {
    match features {
        None | Some(19) | Some(22) => Ok(features),
        Some(other) => Err(CliError::usage(format!("--features {other} is not supported (19 or 22)"))),
    }
}

pub fn required_path(flag: &Option<PathBuf>, file: &Option<PathBuf>, name: &str) -> Result<PathBuf, CliError> {
    flag.clone()
        .or_else(|| file.clone())
        .ok_or_else(|| CliError::usage(format!("--{name} is required")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub data: PathBuf,
    pub features: Option<usize>,
    pub experiment: ExperimentConfig,
}

pub fn resolve_run(common: &Common, run: &RunFlags, file: &FileConfig) -> Result<RunSettings, CliError> {
    let defaults = ExperimentConfig::default();
    let mut cfg = ExperimentConfig {
        r: run.r.or(file.r).unwrap_or(defaults.r),
        k: run.k.or(file.k).unwrap_or(defaults.k),
        hidden: run.hidden.or(file.hidden).unwrap_or(defaults.hidden),
        depth: run.l.or(file.l).unwrap_or(defaults.depth),
        seed: common.seed.or(file.seed).unwrap_or(defaults.seed),
        strategy: run.train_strategy.map(Into::into).or(file.train_strategy).unwrap_or(defaults.strategy),
        ..defaults
    };
    cfg.train.epochs = run.epochs.or(file.epochs).unwrap_or(cfg.train.epochs);
    cfg.train.lr = run.lr.or(file.lr).unwrap_or(cfg.train.lr);
    cfg.train.batch = run.batch.or(file.batch).unwrap_or(cfg.train.batch);
    cfg.train.cv_mode = run.cv_mode.map(Into::into).or(file.cv_mode).unwrap_or(cfg.train.cv_mode);

    if cfg.k == 0 {
        return Err(CliError::usage("--k must be at least 1"));
    }
    if cfg.hidden == 0 || cfg.depth == 0 {
        return Err(CliError::usage("--hidden and --l must be at least 1"));
    }
    if !(cfg.r > 0.0 && cfg.r < 1.0) {
        return Err(CliError::usage(format!("--r {} must lie strictly between 0 and 1", cfg.r)));
    }
    cfg.train.validate()?;

    Ok(RunSettings {
        data: required_path(&run.data, &file.data, "data")?,
        features: check_features(run.features.or(file.features))?,
        experiment: cfg,
    })
}
