//! Inference paths over a trained [`ModelState`].

use crate::class_id::ClassId;
use crate::encoder::Prompt;
use crate::error::{Error, Result};
use crate::trainer::ModelState;

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub predicted: ClassId,
    /// Classes whose keys were retrieved, most similar first.
    pub retrieved: Vec<ClassId>,
    pub query: Vec<f64>,
    pub embedding: Vec<f64>,
}

/// How the prompt for a test sample is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InferenceMode {
    /// Top-`keys` retrieval; the retrieved prompts are concatenated.
    Retrieved { keys: usize },
    /// The true class's prompt is forced (upper bound on key selection).
    OracleKey,
    /// No prompt; query embedding against the query prototypes.
    NoPrompt,
}

impl ModelState {
    /// Retrieve the `keys` closest keys to `q_x`, encode `x` with their
    /// concatenated prompts and return the nearest prototype.
    pub fn classify(&self, x: &[f64], keys: usize) -> Result<Prediction> {
        let query = self.encoder.encode_query(x)?;
        let top = self.pool.retrieve_top_k(&query, keys)?;
        let prompt = Prompt::concat(top.iter().map(|e| &e.prompt)).expect("non-empty retrieval");
        let embedding = self.encoder.encode_with_prompt(x, &prompt)?;
        let predicted = self.prototypes.predict(&embedding)?;
        Ok(Prediction {
            predicted,
            retrieved: top.iter().map(|e| e.class_id).collect(),
            query,
            embedding,
        })
    }

    pub fn classify_with_prompt_of(&self, x: &[f64], class: ClassId) -> Result<ClassId> {
        let entry = self
            .pool
            .get(class)
            .ok_or_else(|| Error::State(format!("class {class} has no prompt")))?;
        let z = self.encoder.encode_with_prompt(x, &entry.prompt)?;
        self.prototypes.predict(&z)
    }

    pub fn classify_without_prompt(&self, x: &[f64]) -> Result<ClassId> {
        let q = self.encoder.encode_query(x)?;
        self.query_prototypes.predict(&q)
    }

    /// Prediction for a labelled sample under `mode`.
    pub fn predict_with(&self, x: &[f64], label: ClassId, mode: InferenceMode) -> Result<ClassId> {
        match mode {
            InferenceMode::Retrieved { keys } => Ok(self.classify(x, keys)?.predicted),
            // A class never trained on has no prompt to force; such a sample is
            // misclassified under any prompt, so plain retrieval stands in.
            InferenceMode::OracleKey if !self.pool.contains(label) => Ok(self.classify(x, 1)?.predicted),
            InferenceMode::OracleKey => self.classify_with_prompt_of(x, label),
            InferenceMode::NoPrompt => self.classify_without_prompt(x),
        }
    }
}
