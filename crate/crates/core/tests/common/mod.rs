#![allow(dead_code)]

use f2ocl_core::encoder::{Block, Tokenizer};
use f2ocl_core::rng;
use f2ocl_core::{EncoderConfig, EncoderState, EncoderVariant, Matrix};
use rand_chacha::ChaCha8Rng;

pub fn gen(seed: u64) -> ChaCha8Rng {
    rng::stream(seed, 0xfeed)
}

pub fn gauss(r: &mut ChaCha8Rng, len: usize, std: f64) -> Vec<f64> {
    rng::gaussian_vec(r, len, std)
}

pub fn mat(r: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Matrix {
    Matrix::from_vec(rows, cols, gauss(r, rows * cols, std))
}

pub fn small_config(input_dim: usize, d: usize, t: usize, heads: usize, blocks: usize) -> EncoderConfig {
    EncoderConfig {
        input_dim,
        token_dim: d,
        num_content_tokens: t,
        num_blocks: blocks,
        num_heads: heads,
        mlp_ratio: 2.0,
        variant: EncoderVariant::TinyTransformer,
        seed: 0,
    }
}

pub fn random_tokenizer(r: &mut ChaCha8Rng, cfg: &EncoderConfig, std: f64) -> Tokenizer {
    let t = cfg.num_content_tokens;
    let projections = (0..t)
        .map(|i| {
            let len = (i + 1) * cfg.input_dim / t - i * cfg.input_dim / t;
            mat(r, len, cfg.token_dim, std)
        })
        .collect();
    Tokenizer::from_projections(cfg.input_dim, cfg.token_dim, projections).unwrap()
}

pub fn random_block(r: &mut ChaCha8Rng, cfg: &EncoderConfig, std: f64) -> Block {
    let d = cfg.token_dim;
    let h = cfg.hidden_dim();
    Block {
        num_heads: cfg.num_heads,
        wq: mat(r, d, d, std),
        bq: gauss(r, d, std),
        wk: mat(r, d, d, std),
        bk: gauss(r, d, std),
        wv: mat(r, d, d, std),
        bv: gauss(r, d, std),
        wo: mat(r, d, d, std),
        bo: gauss(r, d, std),
        w1: mat(r, d, h, std),
        b1: gauss(r, h, std),
        w2: mat(r, h, d, std),
        b2: gauss(r, d, std),
    }
}

/// Transformer encoder with weights large enough that attention and GELU are
/// far from linear.
pub fn strong_transformer(seed: u64, cfg: &EncoderConfig) -> EncoderState {
    let mut r = gen(seed);
    let tok = random_tokenizer(&mut r, cfg, 0.5);
    let blocks = (0..cfg.num_blocks).map(|_| random_block(&mut r, cfg, 0.4)).collect();
    EncoderState::transformer_with(cfg, tok, blocks).unwrap()
}

pub fn strong_affine(seed: u64, cfg: &EncoderConfig) -> EncoderState {
    let mut r = gen(seed);
    let tok = random_tokenizer(&mut r, cfg, 0.5);
    let readout = mat(&mut r, cfg.token_dim, cfg.token_dim, 0.5);
    EncoderState::affine_with(cfg, tok, readout).unwrap()
}

/// Norm-wise relative error between two gradients.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}
