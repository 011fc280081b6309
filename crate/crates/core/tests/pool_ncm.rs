mod common;

use common::*;
use f2ocl_core::loss::{class_weights, LossWeights};
use f2ocl_core::vector::cosine;
use f2ocl_core::{ClassId, Prompt, PromptEntry, PromptPool, Prototype, PrototypeStore};
use proptest::prelude::*;
use rand::Rng;

fn cos_oracle(a: &[f64], b: &[f64]) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for i in 0..a.len() {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        ab / (aa.sqrt() * bb.sqrt())
    }
}

/// Small-integer vectors so that exact ties actually occur.
fn grid_vec(r: &mut impl Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| r.random_range(-2i32..=2) as f64).collect();
        if v.iter().any(|&x| x != 0.0) {
            return v;
        }
    }
}

/// Repeated strict-max selection over class ids in ascending order.
fn brute_top_k(items: &[(ClassId, Vec<f64>)], q: &[f64], k: usize) -> Vec<ClassId> {
    let mut left: Vec<(ClassId, f64)> = items.iter().map(|(c, v)| (*c, cos_oracle(q, v))).collect();
    left.sort_by_key(|(c, _)| *c);
    let mut out = Vec::new();
    while out.len() < k && !left.is_empty() {
        let mut best = 0;
        for i in 1..left.len() {
            if left[i].1 > left[best].1 {
                best = i;
            }
        }
        out.push(left.remove(best).0);
    }
    out
}

#[test]
fn retrieval_and_prediction_match_brute_force() {
    let mut r = gen(42);
    for case in 0..1000 {
        let d = r.random_range(1..=5);
        let classes = r.random_range(1..=8);
        let mut ids: Vec<u32> = (0..20).collect();
        for i in (1..ids.len()).rev() {
            ids.swap(i, r.random_range(0..=i));
        }
        let items: Vec<(ClassId, Vec<f64>)> = ids[..classes]
            .iter()
            .map(|&c| (ClassId(c), grid_vec(&mut r, d)))
            .collect();
        let q = grid_vec(&mut r, d);

        let mut pool = PromptPool::new(1, d);
        let mut store = PrototypeStore::new();
        for (c, v) in &items {
            pool.insert_entry(PromptEntry {
                class_id: *c,
                key: v.clone(),
                prompt: Prompt::zeros(1, d),
            })
            .unwrap();
            store.insert(Prototype { class_id: *c, mu: v.clone(), count: 1 }).unwrap();
        }
        let k = r.random_range(1..=classes + 2);
        let got: Vec<ClassId> = pool.retrieve_top_k(&q, k).unwrap().iter().map(|e| e.class_id).collect();
        assert_eq!(got, brute_top_k(&items, &q, k), "case {case}");
        assert_eq!(store.predict(&q).unwrap(), brute_top_k(&items, &q, 1)[0], "case {case}");
    }
}

#[test]
fn single_batch_prototype_is_the_exact_mean() {
    let mut r = gen(7);
    for _ in 0..200 {
        let d = r.random_range(1..=6);
        let n = r.random_range(1..=12);
        let zs: Vec<Vec<f64>> = (0..n).map(|_| gauss(&mut r, d, 3.0)).collect();
        let mut store = PrototypeStore::new();
        store.create(ClassId(0), zs[0].clone()).unwrap();
        store.get_mut(ClassId(0)).unwrap().absorb(&zs).unwrap();
        let direct: Vec<f64> = (0..d)
            .map(|c| zs.iter().map(|z| z[c]).sum::<f64>() / n as f64)
            .collect();
        let p = store.get(ClassId(0)).unwrap();
        assert_eq!(p.mu, direct);
        assert_eq!(p.count, n as u64);
    }
}

#[test]
fn multi_batch_running_mean_tracks_all_samples() {
    let mut r = gen(8);
    let d = 4;
    let mut proto = Prototype { class_id: ClassId(3), mu: vec![0.0; d], count: 0 };
    let mut all = Vec::new();
    for _ in 0..30 {
        let batch: Vec<Vec<f64>> = (0..r.random_range(1..=7)).map(|_| gauss(&mut r, d, 1.0)).collect();
        proto.absorb(&batch).unwrap();
        all.extend(batch);
    }
    assert_eq!(proto.count, all.len() as u64);
    for c in 0..d {
        let direct = all.iter().map(|z| z[c]).sum::<f64>() / all.len() as f64;
        assert!((proto.mu[c] - direct).abs() < 1e-12);
    }
}

#[test]
fn key_update_examples() {
    let mut e = PromptEntry { class_id: ClassId(0), key: vec![1.0, 0.0], prompt: Prompt::zeros(1, 2) };
    let q = vec![0.0, 1.0];
    e.update_key(std::slice::from_ref(&q), LossWeights { alpha: 0.5, beta: 0.5 }, 0.1).unwrap();
    assert!(cosine(&e.key, &q) > 0.0);
    assert!(cosine(&e.key, &[1.0, 0.0]) < 1.0);

    // Fixed point: every query equals the key.
    let mut e = PromptEntry { class_id: ClassId(0), key: vec![0.6, 0.8], prompt: Prompt::zeros(1, 2) };
    e.update_key(&[vec![0.6, 0.8], vec![1.2, 1.6]], class_weights(3, 2).unwrap(), 0.5).unwrap();
    assert!((e.key[0] - 0.6).abs() < 1e-15 && (e.key[1] - 0.8).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn keys_stay_unit_norm_and_move_toward_queries(
        seed in any::<u64>(),
        d in 1usize..8,
        steps in 1usize..20,
        lr in 0.001f64..2.0,
    ) {
        let mut pool = PromptPool::new(2, d);
        pool.insert_class(ClassId(1), seed).unwrap();
        let mut r = gen(seed);
        for t in 0..steps {
            let queries: Vec<Vec<f64>> = (0..3).map(|_| gauss(&mut r, d, 1.0)).collect();
            if queries.iter().any(|q| q.iter().all(|&v| v == 0.0)) {
                continue;
            }
            let entry = pool.get_mut(ClassId(1)).unwrap();
            let before: f64 = queries.iter().map(|q| cosine(&entry.key, q)).sum();
            let w = class_weights(t as u64, 3).unwrap();
            entry.update_key(&queries, w, lr).unwrap();
            let norm = entry.key.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() < 1e-9);
            if t == 0 && lr < 0.05 {
                // α = 0 on the first step: a small step cannot lower the query term.
                let after: f64 = queries.iter().map(|q| cosine(&entry.key, q)).sum();
                prop_assert!(after >= before - 1e-12);
            }
        }
    }

    #[test]
    fn pool_insertion_is_deterministic(seed in any::<u64>(), ids in proptest::collection::btree_set(0u32..100, 1..10)) {
        let build = || {
            let mut p = PromptPool::new(3, 4);
            for &id in &ids {
                p.insert_class(ClassId(id), seed).unwrap();
            }
            p
        };
        let a = build();
        prop_assert_eq!(&a, &build());
        prop_assert_eq!(a.len(), ids.len());
        for e in a.entries() {
            let n = e.key.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() < 1e-12);
        }
    }
}
