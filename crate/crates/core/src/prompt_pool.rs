//! Pool of `(class, key, prompt)` triplets, one per observed class.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::class_id::ClassId;
use crate::encoder::Prompt;
use crate::error::{Error, Result};
use crate::loss::LossWeights;
use crate::matrix::Matrix;
use crate::rng::{self, INIT_STD};
use crate::vector::{add_cosine_grad, cosine, normalized};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptEntry {
    pub class_id: ClassId,
    /// Unit-norm key matched against query embeddings.
    pub key: Vec<f64>,
    pub prompt: Prompt,
}

impl PromptEntry {
    /// One gradient-descent step on
    /// `L(k') = -(α·cos(k', k_old) + β·Σ_x cos(k', q_x))` starting at `k' = k_old`,
    /// followed by re-normalization.
    pub fn update_key(&mut self, queries: &[Vec<f64>], weights: LossWeights, lr: f64) -> Result<()> {
        if queries.is_empty() {
            return Err(Error::Input(format!(
                "no queries to update key of class {}",
                self.class_id
            )));
        }
        let d = self.key.len();
        let old = self.key.clone();
        let mut grad = vec![0.0; d];
        // At k' = k_old the first term has zero gradient; it is kept so the step
        // is the literal derivative of the loss.
        add_cosine_grad(&old, &old, -weights.alpha, &mut grad);
        for q in queries {
            if q.len() != d {
                return Err(Error::Input(format!(
                    "query has dimension {}, key has {d}",
                    q.len()
                )));
            }
            if normalized(q).is_none() {
                return Err(Error::Input("zero-norm query vector".into()));
            }
            add_cosine_grad(&old, q, -weights.beta, &mut grad);
        }
        let stepped: Vec<f64> = old.iter().zip(&grad).map(|(k, g)| k - lr * g).collect();
        self.key = normalized(&stepped)
            .ok_or_else(|| Error::Numeric(format!("key of class {} collapsed", self.class_id)))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptPool {
    prompt_len: usize,
    token_dim: usize,
    entries: BTreeMap<ClassId, PromptEntry>,
}

impl PromptPool {
    pub fn new(prompt_len: usize, token_dim: usize) -> Self {
        Self {
            prompt_len,
            token_dim,
            entries: BTreeMap::new(),
        }
    }

    pub fn prompt_len(&self) -> usize {
        self.prompt_len
    }

    pub fn token_dim(&self) -> usize {
        self.token_dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, class_id: ClassId) -> bool {
        self.entries.contains_key(&class_id)
    }

    pub fn get(&self, class_id: ClassId) -> Option<&PromptEntry> {
        self.entries.get(&class_id)
    }

    pub fn get_mut(&mut self, class_id: ClassId) -> Option<&mut PromptEntry> {
        self.entries.get_mut(&class_id)
    }

    /// Entries in ascending class order.
    pub fn entries(&self) -> impl Iterator<Item = &PromptEntry> {
        self.entries.values()
    }

    /// Inserts a freshly initialized triplet. The key is a seeded Gaussian
    /// direction; prompt tokens are Gaussian with std 0.02.
    pub fn insert_class(&mut self, class_id: ClassId, seed: u64) -> Result<&PromptEntry> {
        if self.entries.contains_key(&class_id) {
            return Err(Error::Logic(format!("class {class_id} already has a prompt")));
        }
        let class_seed = rng::mix(seed, u64::from(class_id.0));
        let mut key_rng = rng::stream(class_seed, 1);
        let key = loop {
            let raw = rng::gaussian_vec(&mut key_rng, self.token_dim, 1.0);
            if let Some(k) = normalized(&raw) {
                break k;
            }
        };
        let mut prompt_rng = rng::stream(class_seed, 2);
        let tokens = Matrix::from_vec(
            self.prompt_len,
            self.token_dim,
            rng::gaussian_vec(&mut prompt_rng, self.prompt_len * self.token_dim, INIT_STD),
        );
        let entry = PromptEntry {
            class_id,
            key,
            prompt: Prompt::new(tokens),
        };
        Ok(self.entries.entry(class_id).or_insert(entry))
    }

    /// Inserts an already-built entry (used when restoring saved state).
    pub fn insert_entry(&mut self, entry: PromptEntry) -> Result<()> {
        if entry.key.len() != self.token_dim
            || entry.prompt.len() != self.prompt_len
            || entry.prompt.token_dim() != self.token_dim
        {
            return Err(Error::Format(format!(
                "prompt entry for class {} has the wrong shape",
                entry.class_id
            )));
        }
        if self.entries.contains_key(&entry.class_id) {
            return Err(Error::Logic(format!(
                "class {} already has a prompt",
                entry.class_id
            )));
        }
        self.entries.insert(entry.class_id, entry);
        Ok(())
    }

    /// Up to `k` entries by descending cosine similarity between `query` and
    /// the key; ties go to the smaller class id.
    pub fn retrieve_top_k(&self, query: &[f64], k: usize) -> Result<Vec<&PromptEntry>> {
        if self.entries.is_empty() {
            return Err(Error::State("prompt pool is empty".into()));
        }
        if k == 0 {
            return Err(Error::Config("number of retrieved keys must be at least 1".into()));
        }
        if !crate::vector::all_finite(query) {
            return Err(Error::Input("query embedding is not finite".into()));
        }
        let mut scored: Vec<(f64, &PromptEntry)> = self
            .entries
            .values()
            .map(|e| (cosine(query, &e.key), e))
            .collect();
        // Stable sort over ascending class ids keeps the tie rule. `total_cmp`
        // would separate -0.0 from 0.0, so compare numerically.
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
        Ok(scored.into_iter().take(k).map(|(_, e)| e).collect())
    }
}
