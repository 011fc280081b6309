//! Stream and test-set containers.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::class_id::ClassId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub label: ClassId,
    pub features: Vec<f64>,
}

pub type Batch = Vec<Sample>;

/// Ordered batches plus evaluation-only group metadata.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StreamSchedule {
    pub batches: Vec<Batch>,
    /// Group of each batch; `None` when no manifest is known. The trainer never reads this.
    pub batch_groups: Vec<Option<usize>>,
}

impl StreamSchedule {
    pub fn new(batches: Vec<Batch>, batch_groups: Vec<Option<usize>>) -> Self {
        assert_eq!(batches.len(), batch_groups.len());
        Self {
            batches,
            batch_groups,
        }
    }

    pub fn without_groups(batches: Vec<Batch>) -> Self {
        let n = batches.len();
        Self::new(batches, vec![None; n])
    }

    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    pub fn num_samples(&self) -> usize {
        self.batches.iter().map(Vec::len).sum()
    }

    /// Same batches with all group metadata removed.
    pub fn strip_groups(&self) -> Self {
        Self::without_groups(self.batches.clone())
    }

    /// `[first, last]` batch index of every class, in stream order.
    pub fn class_intervals(&self) -> BTreeMap<ClassId, (usize, usize)> {
        let mut out: BTreeMap<ClassId, (usize, usize)> = BTreeMap::new();
        for (t, batch) in self.batches.iter().enumerate() {
            for s in batch {
                out.entry(s.label)
                    .and_modify(|iv| iv.1 = t)
                    .or_insert((t, t));
            }
        }
        out
    }

    /// Classes whose batches are not contiguous, i.e. that disappear and reappear.
    pub fn non_contiguous_classes(&self) -> Vec<ClassId> {
        let intervals = self.class_intervals();
        intervals
            .iter()
            .filter(|(c, &(start, end))| {
                (start..=end).any(|t| !self.batches[t].iter().any(|s| s.label == **c))
            })
            .map(|(c, _)| *c)
            .collect()
    }

    /// Groups whose batches do not form one contiguous run.
    pub fn non_contiguous_groups(&self) -> Vec<usize> {
        let mut seen = Vec::new();
        let mut broken = Vec::new();
        let mut prev = None;
        for g in &self.batch_groups {
            if *g != prev {
                if let Some(g) = g {
                    if seen.contains(g) && !broken.contains(g) {
                        broken.push(*g);
                    }
                    seen.push(*g);
                }
                prev = *g;
            }
        }
        broken
    }

    /// Distinct groups in order of first appearance.
    pub fn group_order(&self) -> Vec<usize> {
        let mut order = Vec::new();
        for g in self.batch_groups.iter().flatten() {
            if !order.contains(g) {
                order.push(*g);
            }
        }
        order
    }
}

/// Held-out samples with the group each class belongs to.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TestSet {
    pub samples: Vec<Sample>,
    pub class_groups: BTreeMap<ClassId, usize>,
}

impl TestSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn group_of(&self, class: ClassId) -> Option<usize> {
        self.class_groups.get(&class).copied()
    }
}
