//! Single-document run configuration.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::StreamConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::rng;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckpointGranularity {
    /// One accuracy-matrix row per completed group.
    #[default]
    Group,
    /// Additionally track first-group accuracy after every batch.
    Batch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    /// Keys retrieved (and prompts concatenated) at inference.
    pub keys: usize,
    pub checkpoints: CheckpointGranularity,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            keys: 1,
            checkpoints: CheckpointGranularity::Group,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub stream: StreamConfig,
    pub eval: EvalOptions,
    pub output_dir: PathBuf,
    /// Master seed; when set it replaces the encoder, train and stream seeds.
    pub seed: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            train: TrainConfig::default(),
            stream: StreamConfig::default(),
            eval: EvalOptions::default(),
            output_dir: PathBuf::from("out"),
            seed: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid run config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Config with the master seed pushed into every component.
    pub fn resolved(&self) -> Self {
        let mut out = self.clone();
        if let Some(seed) = self.seed {
            out.encoder.seed = rng::mix(seed, 1);
            out.train.seed = rng::mix(seed, 2);
            out.stream.seed = rng::mix(seed, 3);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.train.validate()?;
        self.stream.validate()?;
        if self.eval.keys == 0 {
            return Err(Error::Config("eval.keys must be at least 1".into()));
        }
        if self.stream.input_dim != self.encoder.input_dim {
            return Err(Error::Config(format!(
                "stream.input_dim {} differs from encoder.input_dim {}",
                self.stream.input_dim, self.encoder.input_dim
            )));
        }
        if self.stream.batch_size != self.train.batch_size {
            return Err(Error::Config(format!(
                "stream.batch_size {} differs from train.batch_size {}",
                self.stream.batch_size, self.train.batch_size
            )));
        }
        Ok(())
    }
}
