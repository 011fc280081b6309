//! Nearest-class-mean classifier over running-mean prototypes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::class_id::ClassId;
use crate::error::{Error, Result};
use crate::vector::{all_finite, argmax_first, cosine};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prototype {
    pub class_id: ClassId,
    pub mu: Vec<f64>,
    /// Samples absorbed into `mu` so far.
    pub count: u64,
}

impl Prototype {
    /// Folds a batch of new embeddings into the running mean:
    /// `μ' = (n·μ + Σ z') / (n + n*)`.
    pub fn absorb(&mut self, new_embeddings: &[Vec<f64>]) -> Result<()> {
        if new_embeddings.is_empty() {
            return Err(Error::Input(format!(
                "no embeddings to fold into prototype {}",
                self.class_id
            )));
        }
        let n = self.count as f64;
        let mut sum: Vec<f64> = self.mu.iter().map(|m| n * m).collect();
        for z in new_embeddings {
            if z.len() != sum.len() {
                return Err(Error::Input(format!(
                    "embedding has dimension {}, prototype has {}",
                    z.len(),
                    sum.len()
                )));
            }
            for (s, v) in sum.iter_mut().zip(z) {
                *s += v;
            }
        }
        let total = self.count + new_embeddings.len() as u64;
        let mu: Vec<f64> = sum.iter().map(|s| s / total as f64).collect();
        if !all_finite(&mu) {
            return Err(Error::Numeric(format!(
                "prototype {} became non-finite",
                self.class_id
            )));
        }
        self.mu = mu;
        self.count = total;
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrototypeStore {
    prototypes: BTreeMap<ClassId, Prototype>,
}

impl PrototypeStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.prototypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }

    pub fn get(&self, class_id: ClassId) -> Option<&Prototype> {
        self.prototypes.get(&class_id)
    }

    pub fn get_mut(&mut self, class_id: ClassId) -> Option<&mut Prototype> {
        self.prototypes.get_mut(&class_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Prototype> {
        self.prototypes.values()
    }

    /// New prototype at `z` with count 0; the first batch update replaces `z`
    /// with the exact batch mean.
    pub fn create(&mut self, class_id: ClassId, z: Vec<f64>) -> Result<&Prototype> {
        if self.prototypes.contains_key(&class_id) {
            return Err(Error::Logic(format!("class {class_id} already has a prototype")));
        }
        Ok(self.prototypes.entry(class_id).or_insert(Prototype {
            class_id,
            mu: z,
            count: 0,
        }))
    }

    pub fn insert(&mut self, proto: Prototype) -> Result<()> {
        if self.prototypes.contains_key(&proto.class_id) {
            return Err(Error::Logic(format!(
                "class {} already has a prototype",
                proto.class_id
            )));
        }
        self.prototypes.insert(proto.class_id, proto);
        Ok(())
    }

    /// Class of the prototype with the highest cosine similarity to `z`;
    /// ties go to the smaller class id.
    pub fn predict(&self, z: &[f64]) -> Result<ClassId> {
        let protos: Vec<&Prototype> = self.prototypes.values().collect();
        let best = argmax_first(protos.iter().map(|p| cosine(&p.mu, z)))
            .ok_or_else(|| Error::State("prototype store is empty".into()))?;
        Ok(protos[best].class_id)
    }
}
