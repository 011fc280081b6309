//! Pre-norm transformer block with a hand-written backward pass.
//!
//! Weights are stored `in × out` and applied as `x · W`. Layer norms carry no
//! affine parameters.

use crate::matrix::Matrix;
use crate::rng::{self, INIT_STD};

use super::EncoderConfig;

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub num_heads: usize,
    pub wq: Matrix,
    pub bq: Vec<f64>,
    pub wk: Matrix,
    pub bk: Vec<f64>,
    pub wv: Matrix,
    pub bv: Vec<f64>,
    pub wo: Matrix,
    pub bo: Vec<f64>,
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

impl Block {
    pub(super) fn seeded(config: &EncoderConfig, index: usize) -> Self {
        let d = config.token_dim;
        let h = config.hidden_dim();
        let base = 1000 + 16 * index as u64;
        let mat = |slot: u64, rows: usize, cols: usize| {
            let mut r = rng::stream(config.seed, base + slot);
            Matrix::from_vec(rows, cols, rng::gaussian_vec(&mut r, rows * cols, INIT_STD))
        };
        let vec = |slot: u64, len: usize| {
            let mut r = rng::stream(config.seed, base + slot);
            rng::gaussian_vec(&mut r, len, INIT_STD)
        };
        Self {
            num_heads: config.num_heads,
            wq: mat(0, d, d),
            bq: vec(1, d),
            wk: mat(2, d, d),
            bk: vec(3, d),
            wv: mat(4, d, d),
            bv: vec(5, d),
            wo: mat(6, d, d),
            bo: vec(7, d),
            w1: mat(8, d, h),
            b1: vec(9, h),
            w2: mat(10, h, d),
            b2: vec(11, d),
        }
    }

    pub(super) fn visit_params(&self, f: &mut impl FnMut(&Matrix)) {
        let as_row = |v: &Vec<f64>| Matrix::from_vec(1, v.len(), v.clone());
        for m in [&self.wq, &self.wk, &self.wv, &self.wo, &self.w1, &self.w2] {
            f(m);
        }
        for b in [&self.bq, &self.bk, &self.bv, &self.bo, &self.b1, &self.b2] {
            f(&as_row(b));
        }
    }
}

pub(super) struct LayerNormCache {
    normalized: Matrix,
    inv_std: Vec<f64>,
}

pub(super) struct BlockCache {
    ln1: LayerNormCache,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    /// Attention probabilities, one `L × L` matrix per head.
    probs: Vec<Matrix>,
    ln2: LayerNormCache,
    pre_act: Matrix,
}

fn layer_norm(x: &Matrix) -> LayerNormCache {
    let n = x.cols() as f64;
    let mut normalized = Matrix::zeros(x.rows(), x.cols());
    let mut inv_std = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let is = 1.0 / (var + LN_EPS).sqrt();
        for (o, &v) in normalized.row_mut(r).iter_mut().zip(row) {
            *o = (v - mean) * is;
        }
        inv_std.push(is);
    }
    LayerNormCache {
        normalized,
        inv_std,
    }
}

fn layer_norm_backward(cache: &LayerNormCache, dy: &Matrix) -> Matrix {
    let n = dy.cols() as f64;
    let mut dx = Matrix::zeros(dy.rows(), dy.cols());
    for r in 0..dy.rows() {
        let y = cache.normalized.row(r);
        let g = dy.row(r);
        let mean_g = g.iter().sum::<f64>() / n;
        let mean_gy = g.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / n;
        let is = cache.inv_std[r];
        for ((o, &gi), &yi) in dx.row_mut(r).iter_mut().zip(g).zip(y) {
            *o = is * (gi - mean_g - yi * mean_gy);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

pub fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + 0.044715 * u * u * u)).tanh())
}

fn gelu_grad(u: f64) -> f64 {
    let t = (GELU_C * (u + 0.044715 * u * u * u)).tanh();
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * u * u)
}

fn affine(x: &Matrix, w: &Matrix, b: &[f64]) -> Matrix {
    let mut out = x.matmul(w);
    out.add_row_vector(b);
    out
}

fn softmax_rows(m: &mut Matrix) {
    for r in 0..m.rows() {
        let row = m.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
}

fn block_forward(block: &Block, h: &Matrix) -> (Matrix, BlockCache) {
    let len = h.rows();
    let d = h.cols();
    let dh = d / block.num_heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let ln1 = layer_norm(h);
    let q = affine(&ln1.normalized, &block.wq, &block.bq);
    let k = affine(&ln1.normalized, &block.wk, &block.bk);
    let v = affine(&ln1.normalized, &block.wv, &block.bv);

    let mut ctx = Matrix::zeros(len, d);
    let mut probs = Vec::with_capacity(block.num_heads);
    for head in 0..block.num_heads {
        let off = head * dh;
        let mut p = Matrix::zeros(len, len);
        for i in 0..len {
            let qi = &q.row(i)[off..off + dh];
            for j in 0..len {
                p[(i, j)] = scale * crate::vector::dot(qi, &k.row(j)[off..off + dh]);
            }
        }
        softmax_rows(&mut p);
        for i in 0..len {
            for j in 0..len {
                let pij = p[(i, j)];
                let vj = &v.row(j)[off..off + dh];
                for (c, &vv) in ctx.row_mut(i)[off..off + dh].iter_mut().zip(vj) {
                    *c += pij * vv;
                }
            }
        }
        probs.push(p);
    }
    let mut h1 = affine(&ctx, &block.wo, &block.bo);
    h1.add_assign(h);

    let ln2 = layer_norm(&h1);
    let pre_act = affine(&ln2.normalized, &block.w1, &block.b1);
    let mut act = pre_act.clone();
    act.as_mut_slice().iter_mut().for_each(|u| *u = gelu(*u));
    let mut h2 = affine(&act, &block.w2, &block.b2);
    h2.add_assign(&h1);

    let cache = BlockCache {
        ln1,
        q,
        k,
        v,
        probs,
        ln2,
        pre_act,
    };
    (h2, cache)
}

fn block_backward(block: &Block, cache: &BlockCache, d_out: Matrix) -> Matrix {
    let len = d_out.rows();
    let d = d_out.cols();
    let dh = d / block.num_heads;
    let scale = 1.0 / (dh as f64).sqrt();

    // Feed-forward branch.
    let mut d_act = d_out.matmul_t(&block.w2);
    for (g, &u) in d_act.as_mut_slice().iter_mut().zip(cache.pre_act.as_slice()) {
        *g *= gelu_grad(u);
    }
    let d_ln2 = d_act.matmul_t(&block.w1);
    let mut d_h1 = layer_norm_backward(&cache.ln2, &d_ln2);
    d_h1.add_assign(&d_out);

    // Attention branch.
    let d_ctx = d_h1.matmul_t(&block.wo);
    let mut dq = Matrix::zeros(len, d);
    let mut dk = Matrix::zeros(len, d);
    let mut dv = Matrix::zeros(len, d);
    for (head, p) in cache.probs.iter().enumerate() {
        let off = head * dh;
        let mut dp = Matrix::zeros(len, len);
        for i in 0..len {
            let dci = &d_ctx.row(i)[off..off + dh];
            for j in 0..len {
                dp[(i, j)] = crate::vector::dot(dci, &cache.v.row(j)[off..off + dh]);
                let pij = p[(i, j)];
                for (o, &g) in dv.row_mut(j)[off..off + dh].iter_mut().zip(dci) {
                    *o += pij * g;
                }
            }
        }
        for i in 0..len {
            let row_dot: f64 = (0..len).map(|j| p[(i, j)] * dp[(i, j)]).sum();
            for j in 0..len {
                let ds = p[(i, j)] * (dp[(i, j)] - row_dot) * scale;
                if ds == 0.0 {
                    continue;
                }
                let kj = cache.k.row(j)[off..off + dh].to_vec();
                let qi = cache.q.row(i)[off..off + dh].to_vec();
                for (o, kv) in dq.row_mut(i)[off..off + dh].iter_mut().zip(&kj) {
                    *o += ds * kv;
                }
                for (o, qv) in dk.row_mut(j)[off..off + dh].iter_mut().zip(&qi) {
                    *o += ds * qv;
                }
            }
        }
    }
    let mut d_ln1 = dq.matmul_t(&block.wq);
    d_ln1.add_assign(&dk.matmul_t(&block.wk));
    d_ln1.add_assign(&dv.matmul_t(&block.wv));
    let mut d_h = layer_norm_backward(&cache.ln1, &d_ln1);
    d_h.add_assign(&d_h1);
    d_h
}

pub(super) fn forward(blocks: &[Block], tokens: &Matrix) -> Matrix {
    blocks
        .iter()
        .fold(tokens.clone(), |h, b| block_forward(b, &h).0)
}

pub(super) fn forward_cached(blocks: &[Block], tokens: &Matrix) -> (Matrix, Vec<BlockCache>) {
    let mut h = tokens.clone();
    let mut caches = Vec::with_capacity(blocks.len());
    for b in blocks {
        let (next, cache) = block_forward(b, &h);
        caches.push(cache);
        h = next;
    }
    (h, caches)
}

/// Gradient with respect to the input tokens, given the gradient of the output tokens.
pub(super) fn backward(blocks: &[Block], caches: &[BlockCache], d_out: Matrix) -> Matrix {
    blocks
        .iter()
        .zip(caches)
        .rev()
        .fold(d_out, |g, (b, c)| block_backward(b, c, g))
}
