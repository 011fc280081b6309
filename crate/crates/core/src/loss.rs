//! Prompt contrastive loss.
//!
//! For an anchor `i` of class `y` in a batch, with `s(a, b) = cos(a, b) / τ`:
//!
//! ```text
//! L_i = -(α·log Λ1 + β/|S⁺|·Σ_{j∈S⁺} log Λ2(j))
//! Λ1    = e^{s(z_i, μ_y)} / (e^{s(z_i, μ_y)} + Σ_{j∈S⁻} e^{s(z_i, μ_{y_j})})
//! Λ2(j) = e^{s(z_i, z_j)} / (Σ_{j'∈S⁺} e^{s(z_i, z_j')} + Σ_{k∈S⁻} e^{s(z_i, z_k)})
//! ```
//!
//! `S⁺` holds the other same-class samples of the batch, `S⁻` every sample of
//! another class. Prototypes are constants.

use std::collections::BTreeMap;

use crate::class_id::ClassId;
use crate::error::{Error, Result};
use crate::ncm::PrototypeStore;
use crate::vector::{add_cosine_grad, cosine};

/// Count-based weights `α = n/(n + n*)`, `β = n*/(n + n*)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

pub fn class_weights(n_prev: u64, n_batch: u64) -> Result<LossWeights> {
    if n_batch == 0 {
        return Err(Error::Input("class has no samples in the current batch".into()));
    }
    let total = (n_prev + n_batch) as f64;
    Ok(LossWeights {
        alpha: n_prev as f64 / total,
        beta: n_batch as f64 / total,
    })
}

/// Labels and augmented embeddings of one batch.
#[derive(Debug, Clone, Copy)]
pub struct BatchView<'a> {
    pub labels: &'a [ClassId],
    pub embeddings: &'a [Vec<f64>],
    pub temperature: f64,
}

impl<'a> BatchView<'a> {
    pub fn new(labels: &'a [ClassId], embeddings: &'a [Vec<f64>], temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        if labels.len() != embeddings.len() {
            return Err(Error::Input(format!(
                "{} labels for {} embeddings",
                labels.len(),
                embeddings.len()
            )));
        }
        Ok(Self {
            labels,
            embeddings,
            temperature,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Per-anchor breakdown, mostly for inspection and tests.
#[derive(Debug, Clone)]
pub struct AnchorTerms {
    pub lambda1: f64,
    /// One `Λ2` per positive, in batch order.
    pub lambda2: Vec<f64>,
    pub loss: f64,
}

/// Coefficients `∂L_i/∂s` for every similarity the anchor's loss touches.
struct AnchorPartials {
    terms: AnchorTerms,
    /// `(negative sample index, ∂L/∂s(z_i, μ_{y_j}))`, plus the own-prototype entry.
    own_proto: f64,
    neg_protos: Vec<(usize, f64)>,
    /// `(sample index, ∂L/∂s(z_i, z_j))` for positives and negatives.
    pairs: Vec<(usize, f64)>,
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn anchor_partials(
    anchor: usize,
    batch: &BatchView<'_>,
    prototypes: &PrototypeStore,
    weights: LossWeights,
) -> Result<AnchorPartials> {
    let tau = batch.temperature;
    let y = batch.labels[anchor];
    let z = &batch.embeddings[anchor];
    let proto = |c: ClassId| {
        prototypes
            .get(c)
            .map(|p| p.mu.as_slice())
            .ok_or_else(|| Error::State(format!("class {c} has no prototype")))
    };

    let positives: Vec<usize> = (0..batch.len())
        .filter(|&j| j != anchor && batch.labels[j] == y)
        .collect();
    let negatives: Vec<usize> = (0..batch.len()).filter(|&j| batch.labels[j] != y).collect();

    // Prototype term.
    let s_own = cosine(z, proto(y)?) / tau;
    let s_neg: Vec<f64> = negatives
        .iter()
        .map(|&j| Ok(cosine(z, proto(batch.labels[j])?) / tau))
        .collect::<Result<_>>()?;
    let lse1 = log_sum_exp(std::iter::once(s_own).chain(s_neg.iter().copied()));
    let log_l1 = s_own - lse1;

    let alpha = weights.alpha;
    let beta = weights.beta;
    // ∂L/∂s = -α · ∂logΛ1/∂s
    let own_proto = -alpha * (1.0 - log_l1.exp());
    let neg_protos = negatives
        .iter()
        .zip(&s_neg)
        .map(|(&j, &s)| (j, alpha * (s - lse1).exp()))
        .collect();

    let mut lambda2 = Vec::new();
    let mut pairs = Vec::new();
    let mut loss = -alpha * log_l1;
    if !positives.is_empty() {
        let s_pos: Vec<f64> = positives
            .iter()
            .map(|&j| cosine(z, &batch.embeddings[j]) / tau)
            .collect();
        let s_negz: Vec<f64> = negatives
            .iter()
            .map(|&k| cosine(z, &batch.embeddings[k]) / tau)
            .collect();
        let lse2 = log_sum_exp(s_pos.iter().chain(&s_negz).copied());
        let inv_pos = 1.0 / positives.len() as f64;
        let mut t2 = 0.0;
        for (&j, &s) in positives.iter().zip(&s_pos) {
            let log_l2 = s - lse2;
            lambda2.push(log_l2.exp());
            t2 += inv_pos * log_l2;
            pairs.push((j, -beta * (inv_pos - (s - lse2).exp())));
        }
        for (&k, &s) in negatives.iter().zip(&s_negz) {
            pairs.push((k, beta * (s - lse2).exp()));
        }
        loss -= beta * t2;
    }

    Ok(AnchorPartials {
        terms: AnchorTerms {
            lambda1: log_l1.exp(),
            lambda2,
            loss,
        },
        own_proto,
        neg_protos,
        pairs,
    })
}

/// Loss and its `Λ` terms for the sample at index `anchor`.
pub fn loss_for_anchor(
    anchor: usize,
    batch: &BatchView<'_>,
    prototypes: &PrototypeStore,
    weights: LossWeights,
) -> Result<AnchorTerms> {
    if anchor >= batch.len() {
        return Err(Error::Input(format!(
            "anchor {anchor} outside batch of {}",
            batch.len()
        )));
    }
    Ok(anchor_partials(anchor, batch, prototypes, weights)?.terms)
}

/// Mean anchor loss over the batch and `dL/dz` for every embedding.
pub fn batch_loss_and_embedding_grads(
    batch: &BatchView<'_>,
    prototypes: &PrototypeStore,
    weights: &BTreeMap<ClassId, LossWeights>,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let n = batch.len();
    let d = batch.embeddings.first().map_or(0, Vec::len);
    let mut grads = vec![vec![0.0; d]; n];
    if n == 0 {
        return Ok((0.0, grads));
    }
    let inv_n = 1.0 / n as f64;
    let inv_tau = 1.0 / batch.temperature;
    let mut total = 0.0;
    for i in 0..n {
        let y = batch.labels[i];
        let w = *weights
            .get(&y)
            .ok_or_else(|| Error::State(format!("no loss weights for class {y}")))?;
        let partials = anchor_partials(i, batch, prototypes, w)?;
        total += partials.terms.loss;

        let z_i = &batch.embeddings[i];
        let scale = inv_n * inv_tau;
        let own = &prototypes.get(y).expect("checked by anchor_partials").mu;
        add_cosine_grad(z_i, own, scale * partials.own_proto, &mut grads[i]);
        for &(j, c) in &partials.neg_protos {
            let mu = &prototypes.get(batch.labels[j]).expect("checked").mu;
            add_cosine_grad(z_i, mu, scale * c, &mut grads[i]);
        }
        for &(j, c) in &partials.pairs {
            let z_j = &batch.embeddings[j];
            add_cosine_grad(z_i, z_j, scale * c, &mut grads[i]);
            add_cosine_grad(z_j, z_i, scale * c, &mut grads[j]);
        }
    }
    Ok((total * inv_n, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_follow_counts() {
        assert_eq!(class_weights(0, 3).unwrap(), LossWeights { alpha: 0.0, beta: 1.0 });
        assert_eq!(class_weights(10, 10).unwrap(), LossWeights { alpha: 0.5, beta: 0.5 });
        let w = class_weights(490, 10).unwrap();
        assert!((w.alpha - 0.98).abs() < 1e-15 && (w.beta - 0.02).abs() < 1e-15);
        assert!(matches!(class_weights(4, 0), Err(Error::Input(_))));
    }

    #[test]
    fn non_positive_temperature_is_rejected() {
        let labels = [ClassId(0)];
        let z = [vec![1.0]];
        assert!(matches!(BatchView::new(&labels, &z, 0.0), Err(Error::Config(_))));
        assert!(matches!(BatchView::new(&labels, &z, -1.0), Err(Error::Config(_))));
    }

    #[test]
    fn lone_sample_has_zero_loss() {
        let labels = [ClassId(0)];
        let z = [vec![0.3, 0.4]];
        let mut store = PrototypeStore::new();
        store.create(ClassId(0), vec![1.0, 0.0]).unwrap();
        let batch = BatchView::new(&labels, &z, 0.2).unwrap();
        let terms = loss_for_anchor(0, &batch, &store, class_weights(5, 1).unwrap()).unwrap();
        assert_eq!(terms.lambda1, 1.0);
        assert!(terms.lambda2.is_empty());
        assert_eq!(terms.loss, 0.0);
    }

    #[test]
    fn same_class_pair_has_zero_loss_and_grad() {
        let labels = [ClassId(2), ClassId(2)];
        let z = [vec![0.3, 0.4, 1.0], vec![-1.0, 0.2, 0.5]];
        let mut store = PrototypeStore::new();
        store.create(ClassId(2), vec![1.0, 1.0, 0.0]).unwrap();
        let batch = BatchView::new(&labels, &z, 0.2).unwrap();
        let w = class_weights(3, 2).unwrap();
        let terms = loss_for_anchor(0, &batch, &store, w).unwrap();
        assert_eq!(terms.lambda1, 1.0);
        assert_eq!(terms.lambda2, vec![1.0]);
        assert_eq!(terms.loss, 0.0);

        let weights = BTreeMap::from([(ClassId(2), w)]);
        let (loss, grads) = batch_loss_and_embedding_grads(&batch, &store, &weights).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.iter().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn missing_prototype_is_a_state_error() {
        let labels = [ClassId(0), ClassId(1)];
        let z = [vec![1.0, 0.0], vec![0.0, 1.0]];
        let mut store = PrototypeStore::new();
        store.create(ClassId(0), vec![1.0, 0.0]).unwrap();
        let batch = BatchView::new(&labels, &z, 0.2).unwrap();
        let w = class_weights(0, 1).unwrap();
        assert!(matches!(loss_for_anchor(0, &batch, &store, w), Err(Error::State(_))));
    }
}
