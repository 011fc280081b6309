//! Train-and-evaluate driver with group checkpoints.
//!
//! Group metadata is consumed here only to decide *when* to evaluate; the
//! trainer itself sees nothing but batches.

use log::info;
use serde::Serialize;

use crate::classify::InferenceMode;
use crate::config::{CheckpointGranularity, EvalOptions};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::metrics::{
    average_accuracy, average_forgetting, evaluate_group_checkpoint, key_and_ub_metrics,
    AccuracyMatrix,
};
use crate::stream::{StreamSchedule, TestSet};
use crate::trainer::{BatchLog, ModelState, TrainConfig};

/// Summary of one accuracy matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatrixSummary {
    /// `A_n` for `n = 1..=N`.
    pub average_accuracy: Vec<f64>,
    /// `F_n` for `n = 1..=N`; `None` for `n = 1`.
    pub average_forgetting: Vec<Option<f64>>,
    pub final_accuracy: f64,
    pub final_forgetting: Option<f64>,
    pub matrix: AccuracyMatrix,
}

impl MatrixSummary {
    pub fn from_matrix(matrix: AccuracyMatrix) -> Result<Self> {
        let n = matrix.num_rows();
        if n == 0 {
            return Err(Error::Input("no checkpoints were evaluated".into()));
        }
        let average_accuracy = (1..=n)
            .map(|i| average_accuracy(&matrix, i))
            .collect::<Result<Vec<_>>>()?;
        let average_forgetting = (1..=n)
            .map(|i| (i >= 2).then(|| average_forgetting(&matrix, i)).transpose())
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            final_accuracy: average_accuracy[n - 1],
            final_forgetting: average_forgetting[n - 1],
            average_accuracy,
            average_forgetting,
            matrix,
        })
    }
}

/// Accumulates accuracy-matrix rows as training passes group boundaries.
#[derive(Debug, Clone)]
pub struct CheckpointEvaluator {
    modes: Vec<InferenceMode>,
    matrices: Vec<AccuracyMatrix>,
    groups: Vec<usize>,
    curve_group: Option<usize>,
    curve: Vec<f64>,
}

impl CheckpointEvaluator {
    pub fn new(modes: Vec<InferenceMode>) -> Self {
        let matrices = vec![AccuracyMatrix::new(); modes.len()];
        Self {
            modes,
            matrices,
            groups: Vec::new(),
            curve_group: None,
            curve: Vec::new(),
        }
    }

    pub fn groups(&self) -> &[usize] {
        &self.groups
    }

    /// Evaluates every mode after the last batch of `group`.
    pub fn record_group_end(&mut self, state: &ModelState, test: &TestSet, group: usize) -> Result<()> {
        if self.groups.contains(&group) {
            return Err(Error::Input(format!(
                "group {group} ended twice; its batches are not contiguous"
            )));
        }
        self.groups.push(group);
        for (mode, matrix) in self.modes.iter().zip(&mut self.matrices) {
            let row = evaluate_group_checkpoint(state, test, &self.groups, *mode)?;
            matrix.push_row(row)?;
        }
        Ok(())
    }

    /// Per-batch accuracy on the first group, under the first mode.
    pub fn record_batch(&mut self, state: &ModelState, test: &TestSet, group: Option<usize>) -> Result<()> {
        let Some(first) = self.curve_group.or(group) else {
            return Ok(());
        };
        self.curve_group = Some(first);
        let row = evaluate_group_checkpoint(state, test, &[first], self.modes[0])?;
        if let Some(acc) = row[0] {
            self.curve.push(acc);
        }
        Ok(())
    }

    pub fn into_parts(self) -> (Vec<usize>, Vec<AccuracyMatrix>, Vec<f64>) {
        (self.groups, self.matrices, self.curve)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub keys: usize,
    pub passes: usize,
    /// Group ids in the order their checkpoints were taken.
    pub groups: Vec<usize>,
    pub prompted: MatrixSummary,
    /// Query embedding against query prototypes, no prompt involved.
    pub no_prompt: MatrixSummary,
    pub key_accuracy: f64,
    pub upper_bound: f64,
    /// Accuracy on the first group after every batch (batch checkpoints only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_group_curve: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub state: ModelState,
    pub logs: Vec<BatchLog>,
    pub report: ExperimentReport,
}

/// Index of the last batch of every group, paired with the group.
pub fn group_boundaries(stream: &StreamSchedule) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let groups: Vec<usize> = stream.batch_groups.iter().map(|g| g.unwrap_or(0)).collect();
    for (t, &g) in groups.iter().enumerate() {
        if groups.get(t + 1) != Some(&g) {
            out.push((t, g));
        }
    }
    out
}

/// Trains on `stream`, evaluating on `test` at every group boundary. Batches
/// without group metadata count as group 0.
pub fn run_experiment(
    stream: &StreamSchedule,
    test: &TestSet,
    encoder_config: &EncoderConfig,
    train_config: &TrainConfig,
    eval: &EvalOptions,
) -> Result<ExperimentRun> {
    run_with_modes(stream, test, encoder_config, train_config, eval, &[eval.keys])
        .map(|(run, _)| run)
}

/// Like [`run_experiment`], additionally tracking prompted accuracy for
/// every `K` in `extra_keys`. Returns the summaries in the same order.
pub fn run_with_modes(
    stream: &StreamSchedule,
    test: &TestSet,
    encoder_config: &EncoderConfig,
    train_config: &TrainConfig,
    eval: &EvalOptions,
    extra_keys: &[usize],
) -> Result<(ExperimentRun, Vec<MatrixSummary>)> {
    if eval.keys == 0 || extra_keys.contains(&0) {
        return Err(Error::Config("keys at inference must be at least 1".into()));
    }
    if stream.is_empty() {
        return Err(Error::Input("cannot run an experiment on an empty stream".into()));
    }
    let mut modes = vec![
        InferenceMode::Retrieved { keys: eval.keys },
        InferenceMode::NoPrompt,
    ];
    modes.extend(extra_keys.iter().map(|&keys| InferenceMode::Retrieved { keys }));
    let mut evaluator = CheckpointEvaluator::new(modes);
    let boundaries = group_boundaries(stream);
    let mut next = boundaries.iter().peekable();
    let per_batch = eval.checkpoints == CheckpointGranularity::Batch;

    let mut state = ModelState::new(encoder_config, train_config)?;
    let mut logs = Vec::with_capacity(stream.len());
    for (t, batch) in stream.batches.iter().enumerate() {
        logs.push(state.process_batch(batch)?);
        if per_batch {
            evaluator.record_batch(&state, test, stream.batch_groups[t].or(Some(0)))?;
        }
        if let Some(&&(end, group)) = next.peek() {
            if end == t {
                next.next();
                evaluator.record_group_end(&state, test, group)?;
                info!("checkpoint after group {group} (batch {t})");
            }
        }
    }

    let keys = key_and_ub_metrics(&state, test, evaluator.groups())?;
    let (groups, matrices, curve) = evaluator.into_parts();
    let mut summaries = matrices
        .into_iter()
        .map(MatrixSummary::from_matrix)
        .collect::<Result<Vec<_>>>()?;
    let extra = summaries.split_off(2);
    let no_prompt = summaries.pop().expect("two base modes");
    let prompted = summaries.pop().expect("two base modes");
    let report = ExperimentReport {
        keys: eval.keys,
        passes: train_config.passes,
        groups,
        prompted,
        no_prompt,
        key_accuracy: keys.key_accuracy,
        upper_bound: keys.upper_bound,
        first_group_curve: per_batch.then_some(curve),
    };
    Ok((ExperimentRun { state, logs, report }, extra))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepCell {
    pub passes: usize,
    pub keys: usize,
    pub final_accuracy: f64,
    pub final_forgetting: Option<f64>,
}

/// Final `A_n`/`F_n` for every `(passes, K)` pair; one training run per pass count.
pub fn sweep(
    stream: &StreamSchedule,
    test: &TestSet,
    encoder_config: &EncoderConfig,
    train_config: &TrainConfig,
    passes: &[usize],
    keys: &[usize],
) -> Result<Vec<SweepCell>> {
    if passes.is_empty() || keys.is_empty() {
        return Err(Error::Config("sweep grid must not be empty".into()));
    }
    let mut cells = Vec::with_capacity(passes.len() * keys.len());
    for &p in passes {
        let cfg = TrainConfig {
            passes: p,
            ..train_config.clone()
        };
        cfg.validate()?;
        let eval = EvalOptions::default();
        let (_, summaries) = run_with_modes(stream, test, encoder_config, &cfg, &eval, keys)?;
        for (&k, s) in keys.iter().zip(summaries) {
            cells.push(SweepCell {
                passes: p,
                keys: k,
                final_accuracy: s.final_accuracy,
                final_forgetting: s.final_forgetting,
            });
        }
    }
    Ok(cells)
}

pub fn sweep_to_csv(cells: &[SweepCell]) -> String {
    let mut out = String::from("passes,keys,final_accuracy,final_forgetting\n");
    for c in cells {
        let f = c.final_forgetting.map(|v| format!("{v:?}")).unwrap_or_default();
        out.push_str(&format!("{},{},{:?},{f}\n", c.passes, c.keys, c.final_accuracy));
    }
    out
}
