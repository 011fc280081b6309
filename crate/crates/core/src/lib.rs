//! Rehearsal-free, task-free online continual learning with class-wise
//! prompts over a frozen encoder and a nearest-class-mean classifier.

pub mod adam;
pub mod class_id;
pub mod classify;
pub mod config;
pub mod datagen;
pub mod encoder;
pub mod error;
pub mod experiment;
pub mod loss;
pub mod matrix;
pub mod metrics;
pub mod ncm;
pub mod prompt_pool;
pub mod rng;
pub mod state_file;
pub mod stream;
pub mod stream_io;
pub mod trainer;
pub mod vector;

pub use class_id::ClassId;
pub use classify::{InferenceMode, Prediction};
pub use config::{CheckpointGranularity, EvalOptions, RunConfig};
pub use datagen::{generate_synthetic_stream, StreamConfig, SyntheticStream};
pub use encoder::{EncoderConfig, EncoderState, EncoderVariant, Prompt};
pub use error::{Error, ErrorKind, Result};
pub use experiment::{run_experiment, sweep, ExperimentReport, ExperimentRun, MatrixSummary, SweepCell};
pub use matrix::Matrix;
pub use metrics::{average_accuracy, average_forgetting, AccuracyMatrix, KeyMetrics};
pub use ncm::{Prototype, PrototypeStore};
pub use prompt_pool::{PromptEntry, PromptPool};
pub use stream::{Batch, Sample, StreamSchedule, TestSet};
pub use trainer::{train_stream, BatchLog, ModelState, StateFootprint, TrainConfig};
