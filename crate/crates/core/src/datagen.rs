//! Synthetic class-incremental streams of Gaussian clusters.
//!
//! Classes are split into disjoint groups; each group's training samples are
//! shuffled and cut into batches, and groups follow one another in the stream.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::class_id::ClassId;
use crate::error::{Error, Result};
use crate::rng;
use crate::stream::{Sample, StreamSchedule, TestSet};
use crate::vector::normalized;

pub const TEST_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StreamConfig {
    pub num_groups: usize,
    pub classes_per_group: usize,
    pub samples_per_class: usize,
    pub input_dim: usize,
    pub batch_size: usize,
    /// Per-coordinate standard deviation around the class mean.
    pub cluster_spread: f64,
    /// Norm of every class mean.
    pub cluster_separation: f64,
    pub seed: u64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            num_groups: 10,
            classes_per_group: 5,
            samples_per_class: 100,
            input_dim: 32,
            batch_size: 10,
            cluster_spread: 0.3,
            cluster_separation: 3.0,
            seed: 0,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("num_groups", self.num_groups),
            ("classes_per_group", self.classes_per_group),
            ("samples_per_class", self.samples_per_class),
            ("input_dim", self.input_dim),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !(self.cluster_spread >= 0.0 && self.cluster_spread.is_finite()) {
            return Err(Error::Config("cluster_spread must be non-negative".into()));
        }
        if !(self.cluster_separation > 0.0 && self.cluster_separation.is_finite()) {
            return Err(Error::Config("cluster_separation must be positive".into()));
        }
        if u32::try_from(self.num_classes()).is_err() {
            return Err(Error::Config("too many classes".into()));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.num_groups * self.classes_per_group
    }

    pub fn test_per_class(&self) -> usize {
        (self.samples_per_class as f64 * TEST_FRACTION).round() as usize
    }

    pub fn train_per_class(&self) -> usize {
        self.samples_per_class - self.test_per_class()
    }
}

/// Generated stream, test set and the true class means.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticStream {
    pub schedule: StreamSchedule,
    pub test: TestSet,
    pub class_means: BTreeMap<ClassId, Vec<f64>>,
}

pub fn generate_synthetic_stream(cfg: &StreamConfig) -> Result<SyntheticStream> {
    cfg.validate()?;
    let total = cfg.num_classes();
    let mut ids: Vec<u32> = (0..total as u32).collect();
    ids.shuffle(&mut rng::stream(cfg.seed, 1));

    let mut class_means = BTreeMap::new();
    let mut class_groups = BTreeMap::new();
    let mut test_samples = Vec::new();
    let mut batches = Vec::new();
    let mut batch_groups = Vec::new();
    let n_test = cfg.test_per_class();

    for (g, group_ids) in ids.chunks(cfg.classes_per_group).enumerate() {
        let mut train = Vec::new();
        for &id in group_ids {
            let class = ClassId(id);
            let mut r = rng::stream(cfg.seed, 1_000 + 2 * u64::from(id));
            let mean = loop {
                let raw = rng::gaussian_vec(&mut r, cfg.input_dim, 1.0);
                if let Some(dir) = normalized(&raw) {
                    break dir
                        .into_iter()
                        .map(|v| v * cfg.cluster_separation)
                        .collect::<Vec<_>>();
                }
            };
            let mut r = rng::stream(cfg.seed, 1_001 + 2 * u64::from(id));
            for i in 0..cfg.samples_per_class {
                let noise = rng::gaussian_vec(&mut r, cfg.input_dim, cfg.cluster_spread);
                let features = mean.iter().zip(&noise).map(|(m, e)| m + e).collect();
                let sample = Sample {
                    label: class,
                    features,
                };
                if i < cfg.samples_per_class - n_test {
                    train.push(sample);
                } else {
                    test_samples.push(sample);
                }
            }
            class_means.insert(class, mean);
            class_groups.insert(class, g);
        }
        train.shuffle(&mut rng::stream(cfg.seed, 2 + g as u64));
        for chunk in train.chunks(cfg.batch_size) {
            batches.push(chunk.to_vec());
            batch_groups.push(Some(g));
        }
    }

    Ok(SyntheticStream {
        schedule: StreamSchedule::new(batches, batch_groups),
        test: TestSet {
            samples: test_samples,
            class_groups,
        },
        class_means,
    })
}
