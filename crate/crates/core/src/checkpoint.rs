//! Versioned JSON snapshot of a trained model and everything needed to apply
//! it to new data.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, FeatureStats};
use crate::episode::{Episode, EpisodeError};
use crate::error::ModelError;
use crate::estimator::StackedNetWeights;
use crate::experiment::{prepare, test_episodes, ExperimentConfig, ExperimentOutcome, Seeds};
use crate::lstm::LstmWeights;
use crate::trainer::ModelParams;

pub const CHECKPOINT_FORMAT: &str = "fewshot-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (format {0:?})")]
    Format(String),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("header says {header:?} but weights have {found:?}")]
    Header { header: ModelShape, found: ModelShape },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub input_dim: usize,
    pub hidden: usize,
    pub depth: usize,
}

impl ModelShape {
    pub fn of(model: &ModelParams) -> Self {
        Self {
            input_dim: model.input_dim(),
            hidden: model.hidden_dim(),
            depth: model.depth(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub shape: ModelShape,
    pub config: ExperimentConfig,
    pub seeds: Seeds,
    pub train_subjects: Vec<u32>,
    pub test_subjects: Vec<u32>,
    pub stats: Option<FeatureStats>,
    /// Digest of the data file the model was trained on, when known.
    #[serde(default)]
    pub data_digest: Option<String>,
    pub model: ModelParams,
}

impl Checkpoint {
    pub fn from_outcome(out: &ExperimentOutcome) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            shape: ModelShape::of(&out.model),
            config: out.config,
            seeds: out.seeds,
            train_subjects: out.train_subjects.clone(),
            test_subjects: out.test_subjects.clone(),
            stats: out.stats.clone(),
            data_digest: None,
            model: out.model.clone(),
        }
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<(), CheckpointError> {
        serde_json::to_writer_pretty(writer, self)?;
        Ok(())
    }

    /// Parses and re-validates every tensor shape against the header.
    pub fn read<R: Read>(reader: R) -> Result<Self, CheckpointError> {
        let ck: Checkpoint = serde_json::from_reader(reader)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(CheckpointError::Format(ck.format));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(ck.version));
        }
        for t in ck.model.tensors() {
            crate::tensor::Tensor::new(t.shape().to_vec(), t.data().to_vec()).map_err(ModelError::from)?;
        }
        let ModelParams { lstm, net } = ck.model.clone();
        let lstm = LstmWeights::new(lstm.forget, lstm.candidate, lstm.input, lstm.output)?;
        let net = StackedNetWeights::new(net.layers)?;
        let model = ModelParams::new(lstm, net)?;
        let found = ModelShape::of(&model);
        if found != ck.shape {
            return Err(CheckpointError::Header {
                header: ck.shape,
                found,
            });
        }
        Ok(ck)
    }

    /// Rebuilds the run's held-out episodes from the raw dataset.
    pub fn test_episodes(&self, ds: &Dataset) -> Result<Vec<Episode>, EpisodeError> {
        let data = prepare(ds, self.stats.as_ref());
        test_episodes(&data, &self.config, &self.seeds, &self.test_subjects)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::read(BufReader::new(File::open(path)?))
    }
}
