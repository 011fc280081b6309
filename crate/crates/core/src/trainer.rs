//! Streaming trainer.
//!
//! Each batch is processed once: unseen classes get a fresh triplet and a
//! placeholder prototype, prompts take `passes` Adam steps on the contrastive
//! loss (each followed by one key step per batch class), and finally the
//! prototypes absorb the batch's embeddings under the final prompts. Nothing
//! sample-level survives the call.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::adam::{adam_step, AdamConfig, AdamSlot};
use crate::class_id::ClassId;
use crate::encoder::{EncoderConfig, EncoderState, Prompt};
use crate::error::{Error, Result};
use crate::loss::{batch_loss_and_embedding_grads, class_weights, BatchView, LossWeights};
use crate::ncm::PrototypeStore;
use crate::prompt_pool::PromptPool;
use crate::rng;
use crate::stream::{Sample, StreamSchedule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub passes: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub key_lr: f64,
    pub temperature: f64,
    pub prompt_length: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 10,
            passes: 5,
            learning_rate: 0.1,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            key_lr: 0.1,
            temperature: 0.2,
            prompt_length: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        positive("learning_rate", self.learning_rate)?;
        positive("key_lr", self.key_lr)?;
        positive("temperature", self.temperature)?;
        positive("adam_eps", self.adam_eps)?;
        if self.passes == 0 || self.batch_size == 0 || self.prompt_length == 0 {
            return Err(Error::Config(
                "passes, batch_size and prompt_length must be at least 1".into(),
            ));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

/// Everything the learner keeps between batches.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub(crate) encoder: EncoderState,
    pub(crate) config: TrainConfig,
    pub(crate) pool: PromptPool,
    pub(crate) prototypes: PrototypeStore,
    /// Prototypes of un-prompted query embeddings, for the no-prompt baseline.
    pub(crate) query_prototypes: PrototypeStore,
    pub(crate) adam: BTreeMap<ClassId, AdamSlot>,
    pub(crate) batches_seen: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchLog {
    pub batch_index: u64,
    /// Loss on the first pass, before any update from this batch.
    pub first_pass_loss: f64,
    /// Loss on the final pass.
    pub loss: f64,
    pub new_classes: usize,
    pub wall_time_secs: f64,
}

/// Record counts of the persistent state; a function of the class count only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateFootprint {
    pub prompt_entries: usize,
    pub prototypes: usize,
    pub query_prototypes: usize,
    pub optimizer_slots: usize,
    pub stored_floats: usize,
}

impl ModelState {
    pub fn new(encoder_config: &EncoderConfig, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let encoder = EncoderState::build(encoder_config)?;
        Ok(Self::from_parts(encoder, config.clone()))
    }

    pub fn from_parts(encoder: EncoderState, config: TrainConfig) -> Self {
        let pool = PromptPool::new(config.prompt_length, encoder.token_dim());
        Self {
            encoder,
            config,
            pool,
            prototypes: PrototypeStore::new(),
            query_prototypes: PrototypeStore::new(),
            adam: BTreeMap::new(),
            batches_seen: 0,
        }
    }

    pub fn encoder(&self) -> &EncoderState {
        &self.encoder
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn pool(&self) -> &PromptPool {
        &self.pool
    }

    pub fn prototypes(&self) -> &PrototypeStore {
        &self.prototypes
    }

    pub fn query_prototypes(&self) -> &PrototypeStore {
        &self.query_prototypes
    }

    pub fn adam_slot(&self, class: ClassId) -> Option<&AdamSlot> {
        self.adam.get(&class)
    }

    pub fn batches_seen(&self) -> u64 {
        self.batches_seen
    }

    /// Historical sample count `n_y`.
    pub fn class_count(&self, class: ClassId) -> u64 {
        self.prototypes.get(class).map_or(0, |p| p.count)
    }

    pub fn num_classes(&self) -> usize {
        self.pool.len()
    }

    pub fn footprint(&self) -> StateFootprint {
        let d = self.encoder.token_dim();
        let per_prompt = self.config.prompt_length * d;
        let stored_floats = self.pool.len() * (d + per_prompt)
            + self.prototypes.len() * d
            + self.query_prototypes.len() * d
            + self.adam.values().map(|s| s.m.len() + s.v.len()).sum::<usize>();
        StateFootprint {
            prompt_entries: self.pool.len(),
            prototypes: self.prototypes.len(),
            query_prototypes: self.query_prototypes.len(),
            optimizer_slots: self.adam.len(),
            stored_floats,
        }
    }

    /// Seed passed to [`PromptPool::insert_class`] for every new class.
    pub fn class_seed(&self) -> u64 {
        rng::mix(self.config.seed, 0x7072_6f6d_7074)
    }

    /// Trains on one batch and returns its log record.
    pub fn process_batch(&mut self, batch: &[Sample]) -> Result<BatchLog> {
        let started = Instant::now();
        let batch_index = self.batches_seen;
        let input_dim = self.encoder.config().input_dim;
        if let Some(bad) = batch.iter().find(|s| s.features.len() != input_dim) {
            return Err(Error::Input(format!(
                "batch {batch_index}: sample of class {} has {} features, expected {input_dim}",
                bad.label,
                bad.features.len()
            )));
        }
        if batch.is_empty() {
            self.batches_seen += 1;
            return Ok(BatchLog {
                batch_index,
                first_pass_loss: 0.0,
                loss: 0.0,
                new_classes: 0,
                wall_time_secs: started.elapsed().as_secs_f64(),
            });
        }

        let labels: Vec<ClassId> = batch.iter().map(|s| s.label).collect();
        let queries = batch
            .iter()
            .map(|s| self.encoder.encode_query(&s.features))
            .collect::<Result<Vec<_>>>()?;

        // Register unseen classes before any loss is computed.
        let mut new_classes = 0;
        let seed = self.class_seed();
        for (i, s) in batch.iter().enumerate() {
            if self.pool.contains(s.label) {
                continue;
            }
            let entry = self.pool.insert_class(s.label, seed)?;
            let placeholder = self.encoder.encode_with_prompt(&s.features, &entry.prompt)?;
            self.prototypes.create(s.label, placeholder)?;
            self.query_prototypes.create(s.label, queries[i].clone())?;
            let len = self.config.prompt_length * self.encoder.token_dim();
            self.adam.insert(s.label, AdamSlot::new(len));
            new_classes += 1;
        }

        let mut members: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
        for (i, &c) in labels.iter().enumerate() {
            members.entry(c).or_default().push(i);
        }
        let weights: BTreeMap<ClassId, LossWeights> = members
            .iter()
            .map(|(&c, idx)| Ok((c, class_weights(self.class_count(c), idx.len() as u64)?)))
            .collect::<Result<_>>()?;

        let adam_cfg = self.config.adam();
        let mut first_pass_loss = 0.0;
        let mut loss = 0.0;
        for pass in 0..self.config.passes {
            let passes = batch
                .iter()
                .map(|s| {
                    let prompt = &self.pool.get(s.label).expect("registered above").prompt;
                    self.encoder.forward_prompted(&s.features, prompt)
                })
                .collect::<Result<Vec<_>>>()?;
            let embeddings: Vec<Vec<f64>> = passes.iter().map(|p| p.embedding().to_vec()).collect();
            let view = BatchView::new(&labels, &embeddings, self.config.temperature)?;
            let (pass_loss, grads) =
                batch_loss_and_embedding_grads(&view, &self.prototypes, &weights)?;
            if !pass_loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "batch {batch_index}, pass {pass}: loss is {pass_loss}"
                )));
            }
            if pass == 0 {
                first_pass_loss = pass_loss;
            }
            loss = pass_loss;

            let d = self.encoder.token_dim();
            let mut prompt_grads: BTreeMap<ClassId, Vec<f64>> = members
                .keys()
                .map(|&c| (c, vec![0.0; self.config.prompt_length * d]))
                .collect();
            for ((fwd, g), c) in passes.iter().zip(&grads).zip(&labels) {
                let dp = fwd.prompt_grad(g)?;
                let acc = prompt_grads.get_mut(c).expect("every label has a slot");
                for (a, v) in acc.iter_mut().zip(dp.as_slice()) {
                    *a += v;
                }
            }
            drop(passes);

            for (c, grad) in &prompt_grads {
                let entry = self.pool.get_mut(*c).expect("registered");
                let slot = self.adam.get_mut(c).expect("registered");
                adam_step(entry.prompt.tokens.as_mut_slice(), grad, slot, &adam_cfg).map_err(
                    |e| match e {
                        Error::Numeric(m) => {
                            Error::Numeric(format!("batch {batch_index}, class {c}: {m}"))
                        }
                        other => other,
                    },
                )?;
            }
            for (c, idx) in &members {
                let class_queries: Vec<Vec<f64>> = idx.iter().map(|&i| queries[i].clone()).collect();
                let entry = self.pool.get_mut(*c).expect("registered");
                entry.update_key(&class_queries, weights[c], self.config.key_lr)?;
            }
        }

        // Fold the batch into the classifier under the final prompts.
        for (c, idx) in &members {
            let prompt: Prompt = self.pool.get(*c).expect("registered").prompt.clone();
            let embeddings = idx
                .iter()
                .map(|&i| self.encoder.encode_with_prompt(&batch[i].features, &prompt))
                .collect::<Result<Vec<_>>>()?;
            self.prototypes
                .get_mut(*c)
                .expect("registered")
                .absorb(&embeddings)?;
            let class_queries: Vec<Vec<f64>> = idx.iter().map(|&i| queries[i].clone()).collect();
            self.query_prototypes
                .get_mut(*c)
                .expect("registered")
                .absorb(&class_queries)?;
        }
        self.batches_seen += 1;

        Ok(BatchLog {
            batch_index,
            first_pass_loss,
            loss,
            new_classes,
            wall_time_secs: started.elapsed().as_secs_f64(),
        })
    }
}

/// Folds [`ModelState::process_batch`] over the whole stream. Group metadata is not read.
pub fn train_stream(
    stream: &StreamSchedule,
    encoder_config: &EncoderConfig,
    config: &TrainConfig,
) -> Result<(ModelState, Vec<BatchLog>)> {
    let mut state = ModelState::new(encoder_config, config)?;
    let logs = stream
        .batches
        .iter()
        .map(|b| state.process_batch(b))
        .collect::<Result<Vec<_>>>()?;
    Ok((state, logs))
}
