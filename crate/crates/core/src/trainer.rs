//! Episodic training and evaluation of the joint embedder + estimator model.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::episode::{circular_shift_folds, sliding_windows, Episode, EpisodeError};
use crate::error::ModelError;
use crate::estimator::{estimate_params, BoundNet, StackedNetWeights};
use crate::head::{mse_loss, predict};
use crate::lstm::{embed_episode, BoundLstm, LstmWeights};
use crate::metrics::{MetricError, MetricReport};
use crate::optim::{Optimizer, OptimizerKind};
use crate::tensor::{Tape, Tensor, Var};

/// Batch losses above this abort training.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Episode(#[from] EpisodeError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("no episodes to train on")]
    NoEpisodes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CvMode {
    /// No circular shifts.
    Na,
    /// Shifted folds during training only.
    Semi,
    /// Shifted folds during training and evaluation.
    #[default]
    Full,
}

impl CvMode {
    pub fn trains_on_folds(self) -> bool {
        self != CvMode::Na
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub lstm: LstmWeights,
    pub net: StackedNetWeights,
}

/// Parameters bound as leaves of one tape.
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub lstm: BoundLstm,
    pub net: BoundNet,
    leaves: Vec<Var>,
}

impl ModelParams {
    pub fn new(lstm: LstmWeights, net: StackedNetWeights) -> Result<Self, ModelError> {
        if net.width() != lstm.hidden_dim() + 1 {
            return Err(ModelError::shape(
                "estimator width",
                lstm.hidden_dim() + 1,
                net.width(),
            ));
        }
        Ok(Self { lstm, net })
    }

    pub fn init(input_dim: usize, hidden: usize, depth: usize, seed: u64) -> Self {
        Self {
            lstm: LstmWeights::init(input_dim, hidden, seed),
            net: StackedNetWeights::init(hidden, depth, seed.wrapping_add(0x9e37_79b9_7f4a_7c15)),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.lstm.input_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.lstm.hidden_dim()
    }

    pub fn depth(&self) -> usize {
        self.net.depth()
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut t = self.lstm.tensors();
        t.extend(self.net.tensors());
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut t = self.lstm.tensors_mut();
        t.extend(self.net.tensors_mut());
        t
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundModel {
        let leaves: Vec<Var> = self.tensors().into_iter().map(|t| tape.leaf(t.clone())).collect();
        BoundModel {
            lstm: BoundLstm::from_vars(&leaves[..8], self.hidden_dim()),
            net: BoundNet::from_vars(&leaves[8..], self.net.width()),
            leaves,
        }
    }

    /// Prediction for the episode's target without recording gradients.
    pub fn predict(&self, e: &Episode) -> Result<f64, ModelError> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let (pred, _) = forward_episode(&mut tape, &bound, e)?;
        Ok(tape.value(pred)?.data()[0])
    }
}

impl BoundModel {
    /// Rebuilds a binding from variables laid out like
    /// [`ModelParams::tensors`].
    pub fn from_vars(vars: &[Var], hidden: usize) -> Self {
        Self {
            lstm: BoundLstm::from_vars(&vars[..8], hidden),
            net: BoundNet::from_vars(&vars[8..], hidden + 1),
            leaves: vars.to_vec(),
        }
    }

    pub fn leaves(&self) -> &[Var] {
        &self.leaves
    }
}

/// Embeds all members, estimates `{w, beta}` from the support pairs and
/// predicts the target. Returns the prediction and the target label; the
/// label is not used in the forward pass.
///
/// With a single member there is no support set and the prediction is the
/// constant 0 (`w = 0`, `beta = 0`).
pub fn forward_episode(tape: &mut Tape, model: &BoundModel, e: &Episode) -> Result<(Var, f64), ModelError> {
    if e.members.is_empty() {
        return Err(ModelError::EmptyEpisode);
    }
    let label = e.target().score;
    if e.k() == 1 {
        return Ok((tape.constant(0.0), label));
    }
    let xs: Vec<Var> = e
        .members
        .iter()
        .map(|m| tape.leaf(Tensor::vector(m.features.clone())))
        .collect();
    let zs = embed_episode(tape, &model.lstm, &xs)?;
    let support: Vec<(Var, f64)> = e
        .support()
        .iter()
        .zip(&zs)
        .map(|(m, &z)| (z, m.score))
        .collect();
    let params = estimate_params(tape, &model.net, &support)?;
    let target = *zs.last().expect("non-empty");
    Ok((predict(tape, params, target)?, label))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Episodes per gradient step.
    pub batch: usize,
    pub cv_mode: CvMode,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 1e-3,
            batch: 8,
            cv_mode: CvMode::Full,
            optimizer: OptimizerKind::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if self.batch == 0 {
            return Err(TrainError::Config("batch size must be at least 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Config(format!("learning rate {} is not usable", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub episode_id: usize,
    pub test_id: u32,
    pub subject_id: u32,
    /// Circular shift of the member order that produced this prediction.
    pub shift: usize,
    pub prediction: f64,
    pub truth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: MetricReport,
    pub rows: Vec<PredictionRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// Mean squared error over each epoch's batches.
    pub epoch_losses: Vec<f64>,
    pub train: EvalReport,
    pub warnings: Vec<String>,
}

fn expand(episodes: &[Episode], with_folds: bool) -> Vec<Episode> {
    if with_folds {
        episodes.iter().flat_map(circular_shift_folds).collect()
    } else {
        episodes.to_vec()
    }
}

fn degenerate_warning(pool: &[Episode]) -> Option<String> {
    pool.iter()
        .any(|e| e.k() == 1)
        .then(|| "episodes of size 1 have no support set; predictions are fixed at 0".to_string())
}

fn predict_rows(model: &ModelParams, episodes: &[Episode]) -> Result<EvalReport, TrainError> {
    let rows = episodes
        .iter()
        .map(|e| {
            Ok(PredictionRow {
                episode_id: e.id,
                test_id: e.test_id,
                subject_id: e.target().subject_id,
                shift: e.shift,
                prediction: model.predict(e)?,
                truth: e.target().score,
            })
        })
        .collect::<Result<Vec<_>, TrainError>>()?;
    let preds: Vec<f64> = rows.iter().map(|r| r.prediction).collect();
    let truth: Vec<f64> = rows.iter().map(|r| r.truth).collect();
    Ok(EvalReport {
        metrics: MetricReport::compute(&preds, &truth)?,
        rows,
    })
}

/// Predicts each episode's target, or every member through its shifted folds
/// when `cv_mode` is [`CvMode::Full`].
pub fn evaluate(model: &ModelParams, episodes: &[Episode], cv_mode: CvMode) -> Result<EvalReport, TrainError> {
    if episodes.is_empty() {
        return Err(TrainError::NoEpisodes);
    }
    predict_rows(model, &expand(episodes, cv_mode == CvMode::Full))
}

/// One gradient step over `batch`; returns the batch loss.
fn step(
    model: &mut ModelParams,
    opt: &mut Optimizer,
    batch: &[&Episode],
) -> Result<f64, ModelError> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let mut preds = Vec::with_capacity(batch.len());
    let mut labels = Vec::with_capacity(batch.len());
    for e in batch {
        let (p, y) = forward_episode(&mut tape, &bound, e)?;
        preds.push(p);
        labels.push(y);
    }
    let loss = mse_loss(&mut tape, &preds, &labels)?;
    let value = tape.value(loss)?.data()[0];
    if !value.is_finite() || value > DIVERGENCE_LIMIT {
        return Ok(value);
    }
    let grads = tape.backward(loss)?;
    let grads: Vec<Tensor> = bound
        .leaves()
        .iter()
        .zip(model.tensors())
        .map(|(&v, t)| grads.get_or_zeros(v, t))
        .collect();
    opt.apply(model.tensors_mut(), &grads);
    Ok(value)
}

/// Trains on whatever pool `pool_for_epoch` returns for each epoch. The pool
/// of the last epoch is the one reported in `RunReport::train`.
pub fn fit_pool<F>(
    mut model: ModelParams,
    cfg: &TrainConfig,
    mut pool_for_epoch: F,
) -> Result<(ModelParams, RunReport), TrainError>
where
    F: FnMut(usize) -> Result<Vec<Episode>, TrainError>,
{
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut last_pool = Vec::new();
    let mut warnings = Vec::new();

    for epoch in 0..cfg.epochs {
        let pool = pool_for_epoch(epoch)?;
        if pool.is_empty() {
            return Err(TrainError::NoEpisodes);
        }
        if epoch == 0 {
            warnings.extend(degenerate_warning(&pool));
        }
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(cfg.batch).enumerate() {
            let batch: Vec<&Episode> = chunk.iter().map(|&i| &pool[i]).collect();
            let loss = step(&mut model, &mut opt, &batch)?;
            if !loss.is_finite() || loss > DIVERGENCE_LIMIT {
                return Err(TrainError::Divergence { epoch, batch: b, loss });
            }
            total += loss * chunk.len() as f64;
        }
        epoch_losses.push(total / pool.len() as f64);
        last_pool = pool;
    }

    let train = predict_rows(&model, &last_pool)?;
    Ok((
        model,
        RunReport {
            epoch_losses,
            train,
            warnings,
        },
    ))
}

/// Episodic training. In `Semi` and `Full` modes every episode contributes
/// all of its circular-shift folds to the batch pool.
pub fn train(
    model: ModelParams,
    episodes: &[Episode],
    cfg: &TrainConfig,
) -> Result<(ModelParams, RunReport), TrainError> {
    let pool = expand(episodes, cfg.cv_mode.trains_on_folds());
    fit_pool(model, cfg, |_| Ok(pool.clone()))
}

/// Episodic training with a freshly drawn episode list every epoch.
pub fn train_resampled<F>(
    model: ModelParams,
    cfg: &TrainConfig,
    mut episodes_for_epoch: F,
) -> Result<(ModelParams, RunReport), TrainError>
where
    F: FnMut(usize) -> Result<Vec<Episode>, EpisodeError>,
{
    let folds = cfg.cv_mode.trains_on_folds();
    fit_pool(model, cfg, |epoch| Ok(expand(&episodes_for_epoch(epoch)?, folds)))
}

/// Non-episodic baseline: every subject, in the given fixed order, is
/// predicted from a window of its `k - 1` predecessors, and the windows never
/// change between epochs.
pub fn train_traditional(
    model: ModelParams,
    ds: &Dataset,
    subjects: &[u32],
    k: usize,
    cfg: &TrainConfig,
) -> Result<(ModelParams, RunReport), TrainError> {
    let pool = sliding_windows(subjects, ds, k)?;
    fit_pool(model, cfg, |_| Ok(pool.clone()))
}
