mod common;

use common::*;
use f2ocl_core::encoder::{Block, Tokenizer};
use f2ocl_core::{EncoderConfig, EncoderState, EncoderVariant, Matrix, Prompt};

type Rows = Vec<Vec<f64>>;

fn layer_norm(x: &Rows) -> Rows {
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            row.iter().map(|v| (v - mean) / (var + 1e-5).sqrt()).collect()
        })
        .collect()
}

fn lin(x: &Rows, w: &Matrix, b: &[f64]) -> Rows {
    x.iter()
        .map(|row| {
            (0..w.cols())
                .map(|j| b[j] + (0..w.rows()).map(|i| row[i] * w[(i, j)]).sum::<f64>())
                .collect()
        })
        .collect()
}

fn gelu(u: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * u * (1.0 + (c * (u + 0.044715 * u.powi(3))).tanh())
}

fn add(a: &Rows, b: &Rows) -> Rows {
    a.iter()
        .zip(b)
        .map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect())
        .collect()
}

fn oracle_block(b: &Block, h: &Rows) -> Rows {
    let len = h.len();
    let d = h[0].len();
    let dh = d / b.num_heads;
    let n1 = layer_norm(h);
    let q = lin(&n1, &b.wq, &b.bq);
    let k = lin(&n1, &b.wk, &b.bk);
    let v = lin(&n1, &b.wv, &b.bv);
    let mut ctx = vec![vec![0.0; d]; len];
    for head in 0..b.num_heads {
        let cols = head * dh..(head + 1) * dh;
        for i in 0..len {
            let logits: Vec<f64> = (0..len)
                .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let m = logits.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let s: f64 = e.iter().sum();
            for c in cols.clone() {
                ctx[i][c] = (0..len).map(|j| e[j] / s * v[j][c]).sum();
            }
        }
    }
    let h1 = add(h, &lin(&ctx, &b.wo, &b.bo));
    let hidden: Rows = lin(&layer_norm(&h1), &b.w1, &b.b1)
        .into_iter()
        .map(|r| r.into_iter().map(gelu).collect())
        .collect();
    add(&h1, &lin(&hidden, &b.w2, &b.b2))
}

fn oracle_tokens(tok: &Tokenizer, x: &[f64]) -> Rows {
    tok.chunks()
        .iter()
        .zip(tok.projections())
        .map(|(&(s, e), p)| {
            (0..p.cols())
                .map(|j| (s..e).map(|i| x[i] * p[(i - s, j)]).sum())
                .collect()
        })
        .collect()
}

fn oracle_encode(enc: &EncoderState, x: &[f64], prompt: Option<&Prompt>) -> Vec<f64> {
    let mut h: Rows = Vec::new();
    if let Some(p) = prompt {
        h.extend((0..p.len()).map(|r| p.tokens.row(r).to_vec()));
    }
    h.extend(oracle_tokens(enc.tokenizer(), x));
    let d = h[0].len();
    let pooled = |rows: &Rows| -> Vec<f64> {
        (0..d)
            .map(|c| rows.iter().map(|r| r[c]).sum::<f64>() / rows.len() as f64)
            .collect()
    };
    match enc.readout() {
        Some(w) => {
            let m = pooled(&h);
            (0..d).map(|i| (0..d).map(|j| w[(i, j)] * m[j]).sum()).collect()
        }
        None => {
            for b in enc.blocks() {
                h = oracle_block(b, &h);
            }
            pooled(&h)
        }
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn transformer_matches_straight_line_oracle() {
    for seed in 0..20 {
        let cfg = small_config(12, 8, 4, 2, 2);
        for enc in [strong_transformer(seed, &cfg), EncoderState::build(&EncoderConfig { seed, ..cfg.clone() }).unwrap()] {
            let mut r = gen(seed + 100);
            let x = gauss(&mut r, 12, 1.0);
            let p = Prompt::new(mat(&mut r, 3, 8, 0.5));
            let got = enc.encode_with_prompt(&x, &p).unwrap();
            assert!(max_abs_diff(&got, &oracle_encode(&enc, &x, Some(&p))) < 1e-12);
            let q = enc.encode_query(&x).unwrap();
            assert!(max_abs_diff(&q, &oracle_encode(&enc, &x, None)) < 1e-12);
        }
    }
}

#[test]
fn affine_matches_weighted_token_mean() {
    for seed in 0..20 {
        let cfg = EncoderConfig {
            variant: EncoderVariant::AffineReference,
            ..small_config(10, 6, 5, 1, 0)
        };
        let enc = strong_affine(seed, &cfg);
        let mut r = gen(seed + 7);
        let x = gauss(&mut r, 10, 1.0);
        let p = Prompt::new(mat(&mut r, 4, 6, 1.0));
        let got = enc.encode_with_prompt(&x, &p).unwrap();
        assert!(max_abs_diff(&got, &oracle_encode(&enc, &x, Some(&p))) < 1e-12);
    }
}

#[test]
fn identity_affine_pools_prefix_and_content() {
    let cfg = EncoderConfig {
        variant: EncoderVariant::AffineReference,
        ..small_config(4, 2, 2, 1, 0)
    };
    // Chunks of two features map to tokens (x0 + x1, x0 - x1) / 2-ish; use identity-like projections.
    let proj = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
    let tok = Tokenizer::from_projections(4, 2, vec![proj.clone(), proj]).unwrap();
    let enc = EncoderState::affine_with(&cfg, tok, Matrix::identity(2)).unwrap();
    let x = [0.5, -1.0, 0.5, -1.0]; // both tokens equal v = (0.5, -1)
    assert_eq!(enc.encode_query(&x).unwrap(), vec![0.5, -1.0]);

    let u = [2.0, 4.0];
    let p = Prompt::new(Matrix::from_vec(3, 2, [u, u, u].concat()));
    let z = enc.encode_with_prompt(&x, &p).unwrap();
    let want: Vec<f64> = (0..2).map(|i| (3.0 * u[i] + 2.0 * x[i]) / 5.0).collect();
    assert!(max_abs_diff(&z, &want) < 1e-15);
}

fn fd_prompt_grad(enc: &EncoderState, x: &[f64], p: &Prompt, g: &[f64], h: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(p.tokens.as_slice().len());
    for idx in 0..p.tokens.as_slice().len() {
        let eval = |delta: f64| {
            let mut pp = p.clone();
            pp.tokens.as_mut_slice()[idx] += delta;
            let z = enc.encode_with_prompt(x, &pp).unwrap();
            z.iter().zip(g).map(|(a, b)| a * b).sum::<f64>()
        };
        out.push((eval(h) - eval(-h)) / (2.0 * h));
    }
    out
}

fn check_prompt_grads(make: impl Fn(u64) -> (EncoderState, usize)) {
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let (enc, lp) = make(seed);
        let d = enc.token_dim();
        let mut r = gen(seed + 5_000);
        let x = gauss(&mut r, enc.config().input_dim, 1.0);
        let p = Prompt::new(mat(&mut r, lp, d, 0.5));
        let g = gauss(&mut r, d, 1.0);
        let analytic = enc.grad_wrt_prompt(&x, &p, &g).unwrap();
        let numeric = fd_prompt_grad(&enc, &x, &p, &g, 1e-5);
        let e = rel_err(analytic.as_slice(), &numeric);
        worst = worst.max(e);
        assert!(e < 1e-4, "seed {seed}: relative error {e}");
    }
    eprintln!("worst relative error {worst:.3e}");
}

#[test]
fn transformer_prompt_gradient_matches_finite_differences() {
    check_prompt_grads(|seed| {
        let heads = [1, 2, 4][seed as usize % 3];
        let cfg = small_config(8, 8, 4, heads, 1 + seed as usize % 2);
        (strong_transformer(seed, &cfg), 4)
    });
}

#[test]
fn seeded_transformer_prompt_gradient_matches_finite_differences() {
    check_prompt_grads(|seed| {
        let cfg = EncoderConfig {
            seed,
            ..small_config(8, 8, 4, 2, 2)
        };
        (EncoderState::build(&cfg).unwrap(), 3)
    });
}

#[test]
fn affine_prompt_gradient_matches_finite_differences() {
    check_prompt_grads(|seed| {
        let cfg = EncoderConfig {
            variant: EncoderVariant::AffineReference,
            ..small_config(8, 1 + seed as usize % 8, 4, 1, 0)
        };
        (strong_affine(seed, &cfg), 1 + seed as usize % 4)
    });
}

#[test]
fn zero_upstream_gives_zero_gradient() {
    let cfg = small_config(8, 8, 4, 2, 1);
    let enc = strong_transformer(1, &cfg);
    let p = Prompt::zeros(4, 8);
    let grad = enc.grad_wrt_prompt(&[0.3; 8], &p, &[0.0; 8]).unwrap();
    assert!(grad.as_slice().iter().all(|&v| v == 0.0));
}

#[test]
fn explicit_blocks_are_validated() {
    let cfg = small_config(8, 8, 4, 2, 1);
    let mut r = gen(3);
    let tok = random_tokenizer(&mut r, &cfg, 0.1);
    let mut block = random_block(&mut r, &cfg, 0.1);
    block.b1.pop();
    assert!(EncoderState::transformer_with(&cfg, tok, vec![block]).is_err());
}
