mod common;

use std::collections::BTreeMap;

use common::*;
use f2ocl_core::loss::{batch_loss_and_embedding_grads, class_weights, loss_for_anchor, BatchView, LossWeights};
use f2ocl_core::vector::cosine;
use f2ocl_core::{ClassId, Prototype, PrototypeStore};
use proptest::prelude::*;

/// Random labelled batch with a prototype per class and random weights.
struct Instance {
    labels: Vec<ClassId>,
    z: Vec<Vec<f64>>,
    store: PrototypeStore,
    weights: BTreeMap<ClassId, LossWeights>,
}

fn instance(seed: u64, d: usize, n: usize, classes: u32) -> Instance {
    let mut r = gen(seed);
    let labels: Vec<ClassId> = (0..n).map(|i| ClassId((i as u32 * 7 + seed as u32) % classes)).collect();
    let z = (0..n).map(|_| gauss(&mut r, d, 1.0)).collect();
    let mut store = PrototypeStore::new();
    let mut weights = BTreeMap::new();
    for c in 0..classes {
        store
            .insert(Prototype { class_id: ClassId(c), mu: gauss(&mut r, d, 1.0), count: 3 })
            .unwrap();
        let n_batch = labels.iter().filter(|l| l.0 == c).count() as u64;
        if n_batch > 0 {
            weights.insert(ClassId(c), class_weights((seed + c as u64) % 5, n_batch).unwrap());
        }
    }
    Instance { labels, z, store, weights }
}

/// Direct transcription of the loss with plain exponentials.
fn oracle_anchor(i: usize, inst: &Instance, tau: f64) -> (f64, f64, Vec<f64>) {
    let y = inst.labels[i];
    let w = inst.weights[&y];
    let e = |a: &[f64], b: &[f64]| (cosine(a, b) / tau).exp();
    let mu = |c: ClassId| inst.store.get(c).unwrap().mu.clone();
    let zi = &inst.z[i];
    let pos: Vec<usize> = (0..inst.z.len()).filter(|&j| j != i && inst.labels[j] == y).collect();
    let neg: Vec<usize> = (0..inst.z.len()).filter(|&j| inst.labels[j] != y).collect();

    let own = e(zi, &mu(y));
    let gamma1: f64 = neg.iter().map(|&j| e(zi, &mu(inst.labels[j]))).sum();
    let lambda1 = own / (own + gamma1);

    let gamma2: f64 = neg.iter().map(|&k| e(zi, &inst.z[k])).sum();
    let pos_sum: f64 = pos.iter().map(|&j| e(zi, &inst.z[j])).sum();
    let lambda2: Vec<f64> = pos.iter().map(|&j| e(zi, &inst.z[j]) / (pos_sum + gamma2)).collect();
    let second = if pos.is_empty() {
        0.0
    } else {
        w.beta / pos.len() as f64 * lambda2.iter().map(|l| l.ln()).sum::<f64>()
    };
    (-(w.alpha * lambda1.ln() + second), lambda1, lambda2)
}

fn mean_loss(inst: &Instance, z: &[Vec<f64>], tau: f64) -> f64 {
    let view = BatchView::new(&inst.labels, z, tau).unwrap();
    batch_loss_and_embedding_grads(&view, &inst.store, &inst.weights).unwrap().0
}

#[test]
fn anchor_terms_match_direct_evaluation() {
    for seed in 0..200 {
        let inst = instance(seed, 2 + seed as usize % 6, 2 + seed as usize % 7, 1 + seed as u32 % 4);
        let view = BatchView::new(&inst.labels, &inst.z, 0.2).unwrap();
        let mut total = 0.0;
        for i in 0..inst.z.len() {
            let got = loss_for_anchor(i, &view, &inst.store, inst.weights[&inst.labels[i]]).unwrap();
            let (loss, l1, l2) = oracle_anchor(i, &inst, 0.2);
            assert!((got.loss - loss).abs() < 1e-12 * loss.abs().max(1.0), "seed {seed}");
            assert!((got.lambda1 - l1).abs() < 1e-12);
            assert_eq!(got.lambda2.len(), l2.len());
            for (a, b) in got.lambda2.iter().zip(&l2) {
                assert!((a - b).abs() < 1e-12);
            }
            total += loss;
        }
        let mean = mean_loss(&inst, &inst.z, 0.2);
        assert!((mean - total / inst.z.len() as f64).abs() < 1e-12 * mean.max(1.0));
    }
}

#[test]
fn two_by_two_example_at_d4() {
    let inst = Instance {
        labels: vec![ClassId(0), ClassId(0), ClassId(1), ClassId(1)],
        ..instance(11, 4, 4, 2)
    };
    let inst = Instance {
        weights: [(ClassId(0), class_weights(2, 2).unwrap()), (ClassId(1), class_weights(0, 2).unwrap())].into(),
        ..inst
    };
    let view = BatchView::new(&inst.labels, &inst.z, 0.2).unwrap();
    for i in 0..4 {
        let got = loss_for_anchor(i, &view, &inst.store, inst.weights[&inst.labels[i]]).unwrap();
        let (want, _, _) = oracle_anchor(i, &inst, 0.2);
        assert!((got.loss - want).abs() < 1e-12);
    }
}

#[test]
fn embedding_gradients_match_finite_differences() {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for seed in 0..150 {
        let d = 2 + seed as usize % 7; // 2..=8
        let n = 2 + seed as usize % 7;
        let inst = instance(seed, d, n, 1 + seed as u32 % 4);
        let view = BatchView::new(&inst.labels, &inst.z, 0.2).unwrap();
        let (_, grads) = batch_loss_and_embedding_grads(&view, &inst.store, &inst.weights).unwrap();
        let mut numeric = Vec::new();
        for i in 0..n {
            for c in 0..d {
                let mut zp = inst.z.clone();
                zp[i][c] += h;
                let mut zm = inst.z.clone();
                zm[i][c] -= h;
                numeric.push((mean_loss(&inst, &zp, 0.2) - mean_loss(&inst, &zm, 0.2)) / (2.0 * h));
            }
        }
        let analytic: Vec<f64> = grads.concat();
        let e = rel_err(&analytic, &numeric);
        worst = worst.max(e);
        assert!(e < 1e-4, "seed {seed}: {e}");
    }
    eprintln!("worst relative error {worst:.3e}");
}

#[test]
fn zero_loss_configurations_have_zero_gradient() {
    let labels = [ClassId(0), ClassId(0)];
    let z = vec![vec![1.0, 2.0, 0.5], vec![-0.5, 1.0, 3.0]];
    let mut store = PrototypeStore::new();
    store.insert(Prototype { class_id: ClassId(0), mu: vec![0.3, 0.1, 0.2], count: 4 }).unwrap();
    let weights = [(ClassId(0), class_weights(4, 2).unwrap())].into();
    let view = BatchView::new(&labels, &z, 0.2).unwrap();
    let (loss, grads) = batch_loss_and_embedding_grads(&view, &store, &weights).unwrap();
    assert_eq!(loss, 0.0);
    assert!(grads.iter().flatten().all(|&g| g == 0.0));
}

fn arb_instance() -> impl Strategy<Value = (u64, usize, usize, u32)> {
    (any::<u64>(), 2usize..=8, 1usize..=8, 1u32..=4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lambdas_are_probabilities_and_loss_nonnegative((seed, d, n, k) in arb_instance()) {
        let inst = instance(seed, d, n, k);
        let view = BatchView::new(&inst.labels, &inst.z, 0.2).unwrap();
        for i in 0..n {
            let t = loss_for_anchor(i, &view, &inst.store, inst.weights[&inst.labels[i]]).unwrap();
            prop_assert!(t.lambda1 > 0.0 && t.lambda1 <= 1.0);
            prop_assert!(t.lambda2.iter().all(|&l| l > 0.0 && l <= 1.0));
            prop_assert!(t.loss >= 0.0);
        }
    }

    #[test]
    fn loss_is_scale_invariant((seed, d, n, k) in arb_instance(), idx in 0usize..8, c in 0.01f64..100.0) {
        let inst = instance(seed, d, n, k);
        let mut z = inst.z.clone();
        let i = idx % n;
        z[i].iter_mut().for_each(|v| *v *= c);
        let a = mean_loss(&inst, &inst.z, 0.2);
        let b = mean_loss(&inst, &z, 0.2);
        prop_assert!((a - b).abs() <= 1e-10 * a.max(1.0));
    }

    #[test]
    fn permuting_the_batch_permutes_gradients((seed, d, n, k) in arb_instance(), rot in 0usize..8) {
        let inst = instance(seed, d, n, k);
        let view = BatchView::new(&inst.labels, &inst.z, 0.2).unwrap();
        let (loss, grads) = batch_loss_and_embedding_grads(&view, &inst.store, &inst.weights).unwrap();
        let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).rev().collect();
        let labels: Vec<ClassId> = perm.iter().map(|&i| inst.labels[i]).collect();
        let z: Vec<Vec<f64>> = perm.iter().map(|&i| inst.z[i].clone()).collect();
        let view = BatchView::new(&labels, &z, 0.2).unwrap();
        let (loss_p, grads_p) = batch_loss_and_embedding_grads(&view, &inst.store, &inst.weights).unwrap();
        prop_assert!((loss - loss_p).abs() <= 1e-12 * loss.max(1.0));
        for (slot, &i) in perm.iter().enumerate() {
            prop_assert!(rel_err(&grads[i], &grads_p[slot]) < 1e-10);
        }
    }
}
