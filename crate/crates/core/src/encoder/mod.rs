//! Frozen feature encoder.
//!
//! A raw feature vector is split into `num_content_tokens` contiguous chunks,
//! each chunk is projected to a `token_dim` token, optional prompt tokens are
//! prepended, and the token sequence is pushed through a frozen body whose
//! output is mean-pooled over every position. Only prompt tokens ever receive
//! gradients.

mod transformer;

use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{self, INIT_STD};

pub use transformer::Block;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderVariant {
    /// `z = W · mean(tokens)`; analytically checkable.
    AffineReference,
    /// Pre-norm self-attention + feed-forward blocks, mean-pooled.
    TinyTransformer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub token_dim: usize,
    pub num_content_tokens: usize,
    pub num_blocks: usize,
    pub num_heads: usize,
    pub mlp_ratio: f64,
    pub variant: EncoderVariant,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            input_dim: 32,
            token_dim: 32,
            num_content_tokens: 4,
            num_blocks: 1,
            num_heads: 2,
            mlp_ratio: 2.0,
            variant: EncoderVariant::TinyTransformer,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.token_dim == 0 || self.num_content_tokens == 0 {
            return Err(Error::Config(
                "input_dim, token_dim and num_content_tokens must be positive".into(),
            ));
        }
        if self.num_content_tokens > self.input_dim {
            return Err(Error::Config(format!(
                "cannot split {} input features into {} tokens",
                self.input_dim, self.num_content_tokens
            )));
        }
        if self.variant == EncoderVariant::TinyTransformer {
            if self.num_heads == 0 || self.token_dim % self.num_heads != 0 {
                return Err(Error::Config(format!(
                    "token_dim {} is not divisible by num_heads {}",
                    self.token_dim, self.num_heads
                )));
            }
            if !(self.mlp_ratio.is_finite() && self.mlp_ratio > 0.0) {
                return Err(Error::Config("mlp_ratio must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn hidden_dim(&self) -> usize {
        ((self.mlp_ratio * self.token_dim as f64).round() as usize).max(1)
    }
}

/// Learnable prompt: `len` tokens of dimension `token_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub tokens: Matrix,
}

impl Prompt {
    pub fn new(tokens: Matrix) -> Self {
        Self { tokens }
    }

    pub fn zeros(len: usize, token_dim: usize) -> Self {
        Self::new(Matrix::zeros(len, token_dim))
    }

    pub fn len(&self) -> usize {
        self.tokens.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.rows() == 0
    }

    pub fn token_dim(&self) -> usize {
        self.tokens.cols()
    }

    /// Joins prompts end to end, in the given order.
    pub fn concat<'a>(prompts: impl IntoIterator<Item = &'a Prompt>) -> Option<Prompt> {
        let mut iter = prompts.into_iter();
        let first = iter.next()?.tokens.clone();
        let tokens = iter.fold(first, |acc, p| Matrix::vstack(&acc, &p.tokens));
        Some(Prompt::new(tokens))
    }
}

/// Fixed linear map from a feature vector to `T` content tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Tokenizer {
    input_dim: usize,
    token_dim: usize,
    chunks: Vec<(usize, usize)>,
    /// One `chunk_len × token_dim` projection per chunk.
    projections: Vec<Matrix>,
}

impl Tokenizer {
    fn seeded(config: &EncoderConfig) -> Self {
        let chunks = chunk_bounds(config.input_dim, config.num_content_tokens);
        let projections = chunks
            .iter()
            .enumerate()
            .map(|(i, &(start, end))| {
                let mut rng = rng::stream(config.seed, 100 + i as u64);
                let len = end - start;
                Matrix::from_vec(
                    len,
                    config.token_dim,
                    rng::gaussian_vec(&mut rng, len * config.token_dim, INIT_STD),
                )
            })
            .collect();
        Self {
            input_dim: config.input_dim,
            token_dim: config.token_dim,
            chunks,
            projections,
        }
    }

    /// Builds a tokenizer from explicit per-chunk projections (`chunk_len × token_dim`).
    pub fn from_projections(
        input_dim: usize,
        token_dim: usize,
        projections: Vec<Matrix>,
    ) -> Result<Self> {
        let chunks = chunk_bounds(input_dim, projections.len());
        for (&(s, e), p) in chunks.iter().zip(&projections) {
            if p.rows() != e - s || p.cols() != token_dim {
                return Err(Error::Config(format!(
                    "projection is {}x{}, expected {}x{}",
                    p.rows(),
                    p.cols(),
                    e - s,
                    token_dim
                )));
            }
        }
        Ok(Self {
            input_dim,
            token_dim,
            chunks,
            projections,
        })
    }

    pub fn chunks(&self) -> &[(usize, usize)] {
        &self.chunks
    }

    pub fn projections(&self) -> &[Matrix] {
        &self.projections
    }

    pub fn tokenize(&self, x: &[f64]) -> Result<Matrix> {
        if x.len() != self.input_dim {
            return Err(Error::Input(format!(
                "feature vector has length {}, encoder expects {}",
                x.len(),
                self.input_dim
            )));
        }
        let mut tokens = Matrix::zeros(self.chunks.len(), self.token_dim);
        for (t, (&(start, end), proj)) in self.chunks.iter().zip(&self.projections).enumerate() {
            let row = tokens.row_mut(t);
            for (k, &xk) in x[start..end].iter().enumerate() {
                for (r, &w) in row.iter_mut().zip(proj.row(k)) {
                    *r += xk * w;
                }
            }
        }
        Ok(tokens)
    }
}

/// Splits `0..n` into `parts` contiguous, nearly equal ranges.
fn chunk_bounds(n: usize, parts: usize) -> Vec<(usize, usize)> {
    (0..parts)
        .map(|i| (i * n / parts, (i + 1) * n / parts))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
enum Body {
    Affine { readout: Matrix },
    Transformer { blocks: Vec<Block> },
}

/// Frozen encoder parameters. Nothing mutates an `EncoderState` after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderState {
    config: EncoderConfig,
    tokenizer: Tokenizer,
    body: Body,
}

impl EncoderState {
    pub fn build(config: &EncoderConfig) -> Result<Self> {
        config.validate()?;
        let tokenizer = Tokenizer::seeded(config);
        let body = match config.variant {
            EncoderVariant::AffineReference => {
                let d = config.token_dim;
                let mut rng = rng::stream(config.seed, 1);
                Body::Affine {
                    readout: Matrix::from_vec(d, d, rng::gaussian_vec(&mut rng, d * d, INIT_STD)),
                }
            }
            EncoderVariant::TinyTransformer => Body::Transformer {
                blocks: (0..config.num_blocks)
                    .map(|b| Block::seeded(config, b))
                    .collect(),
            },
        };
        Ok(Self {
            config: config.clone(),
            tokenizer,
            body,
        })
    }

    /// Affine-reference encoder with an explicit tokenizer and readout (`token_dim × token_dim`).
    pub fn affine_with(config: &EncoderConfig, tokenizer: Tokenizer, readout: Matrix) -> Result<Self> {
        let d = config.token_dim;
        if readout.rows() != d || readout.cols() != d {
            return Err(Error::Config("readout must be token_dim x token_dim".into()));
        }
        let mut config = config.clone();
        config.variant = EncoderVariant::AffineReference;
        Ok(Self {
            config,
            tokenizer,
            body: Body::Affine { readout },
        })
    }

    /// Transformer encoder with explicit parameters, e.g. for tests that need
    /// larger weights than the seeded initialization produces.
    pub fn transformer_with(config: &EncoderConfig, tokenizer: Tokenizer, blocks: Vec<Block>) -> Result<Self> {
        let mut config = config.clone();
        config.variant = EncoderVariant::TinyTransformer;
        config.num_blocks = blocks.len();
        config.validate()?;
        let (d, h) = (config.token_dim, config.hidden_dim());
        let square = [d, d];
        for b in &blocks {
            let shapes_ok = [&b.wq, &b.wk, &b.wv, &b.wo].iter().all(|m| [m.rows(), m.cols()] == square)
                && [b.w1.rows(), b.w1.cols(), b.w2.rows(), b.w2.cols()] == [d, h, h, d]
                && [&b.bq, &b.bk, &b.bv, &b.bo, &b.b2].iter().all(|v| v.len() == d)
                && b.b1.len() == h
                && b.num_heads == config.num_heads;
            if !shapes_ok {
                return Err(Error::Config("block parameters do not match the encoder config".into()));
            }
        }
        if tokenizer.token_dim != d || tokenizer.input_dim != config.input_dim {
            return Err(Error::Config("tokenizer does not match the encoder config".into()));
        }
        Ok(Self {
            config,
            tokenizer,
            body: Body::Transformer { blocks },
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn token_dim(&self) -> usize {
        self.config.token_dim
    }

    /// Readout matrix of the affine-reference variant, applied as `W · v`.
    pub fn readout(&self) -> Option<&Matrix> {
        match &self.body {
            Body::Affine { readout } => Some(readout),
            Body::Transformer { .. } => None,
        }
    }

    pub fn blocks(&self) -> &[Block] {
        match &self.body {
            Body::Affine { .. } => &[],
            Body::Transformer { blocks } => blocks,
        }
    }

    /// Stable hash over every frozen parameter.
    pub fn fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        let mut feed = |m: &Matrix| {
            m.rows().hash(&mut h);
            m.cols().hash(&mut h);
            for v in m.as_slice() {
                v.to_bits().hash(&mut h);
            }
        };
        self.tokenizer.projections.iter().for_each(&mut feed);
        match &self.body {
            Body::Affine { readout } => feed(readout),
            Body::Transformer { blocks } => blocks.iter().for_each(|b| b.visit_params(&mut feed)),
        }
        h.finish()
    }

    /// `q_x = f(x)`: content tokens only.
    pub fn encode_query(&self, x: &[f64]) -> Result<Vec<f64>> {
        let tokens = self.tokenizer.tokenize(x)?;
        Ok(self.forward_tokens(&tokens))
    }

    /// `z_x = f(x, p)`: prompt tokens prepended to the content tokens.
    pub fn encode_with_prompt(&self, x: &[f64], prompt: &Prompt) -> Result<Vec<f64>> {
        let tokens = self.prompted_tokens(x, prompt)?;
        Ok(self.forward_tokens(&tokens))
    }

    /// Forward pass that keeps what the backward pass needs.
    pub fn forward_prompted(&self, x: &[f64], prompt: &Prompt) -> Result<PromptedPass<'_>> {
        let tokens = self.prompted_tokens(x, prompt)?;
        let (embedding, cache) = match &self.body {
            Body::Affine { readout } => (affine_readout(readout, &tokens), None),
            Body::Transformer { blocks } => {
                let (out, caches) = transformer::forward_cached(blocks, &tokens);
                (out.mean_rows(), Some(caches))
            }
        };
        Ok(PromptedPass {
            encoder: self,
            prompt_len: prompt.len(),
            num_tokens: tokens.rows(),
            embedding,
            cache,
        })
    }

    /// Exact `dL/dp` given `upstream = dL/dz` for `z = encode_with_prompt(x, p)`.
    pub fn grad_wrt_prompt(&self, x: &[f64], prompt: &Prompt, upstream: &[f64]) -> Result<Matrix> {
        self.forward_prompted(x, prompt)?.prompt_grad(upstream)
    }

    /// Runs the frozen body over an arbitrary token sequence and mean-pools.
    pub fn forward_tokens(&self, tokens: &Matrix) -> Vec<f64> {
        match &self.body {
            Body::Affine { readout } => affine_readout(readout, tokens),
            Body::Transformer { blocks } => transformer::forward(blocks, tokens).mean_rows(),
        }
    }

    fn prompted_tokens(&self, x: &[f64], prompt: &Prompt) -> Result<Matrix> {
        if prompt.token_dim() != self.config.token_dim {
            return Err(Error::Input(format!(
                "prompt tokens have dimension {}, encoder expects {}",
                prompt.token_dim(),
                self.config.token_dim
            )));
        }
        let content = self.tokenizer.tokenize(x)?;
        Ok(Matrix::vstack(&prompt.tokens, &content))
    }
}

fn affine_readout(readout: &Matrix, tokens: &Matrix) -> Vec<f64> {
    let mean = tokens.mean_rows();
    (0..readout.rows())
        .map(|i| crate::vector::dot(readout.row(i), &mean))
        .collect()
}

/// Result of [`EncoderState::forward_prompted`].
pub struct PromptedPass<'a> {
    encoder: &'a EncoderState,
    prompt_len: usize,
    num_tokens: usize,
    embedding: Vec<f64>,
    cache: Option<Vec<transformer::BlockCache>>,
}

impl PromptedPass<'_> {
    pub fn embedding(&self) -> &[f64] {
        &self.embedding
    }

    pub fn into_embedding(self) -> Vec<f64> {
        self.embedding
    }

    pub fn prompt_grad(&self, upstream: &[f64]) -> Result<Matrix> {
        let d = self.encoder.token_dim();
        if upstream.len() != d {
            return Err(Error::Input(format!(
                "upstream gradient has length {}, expected {d}",
                upstream.len()
            )));
        }
        let n = self.num_tokens as f64;
        let mut grad = Matrix::zeros(self.prompt_len, d);
        match &self.encoder.body {
            Body::Affine { readout } => {
                // d/dtoken of W·mean(tokens) is Wᵀ g / n for every token.
                let mut wt_g = vec![0.0; d];
                for (i, &gi) in upstream.iter().enumerate() {
                    for (o, &w) in wt_g.iter_mut().zip(readout.row(i)) {
                        *o += w * gi;
                    }
                }
                for r in 0..self.prompt_len {
                    for (o, &v) in grad.row_mut(r).iter_mut().zip(&wt_g) {
                        *o = v / n;
                    }
                }
            }
            Body::Transformer { blocks } => {
                let caches = self.cache.as_ref().expect("transformer pass keeps caches");
                let mut d_out = Matrix::zeros(self.num_tokens, d);
                for r in 0..self.num_tokens {
                    for (o, &g) in d_out.row_mut(r).iter_mut().zip(upstream) {
                        *o = g / n;
                    }
                }
                let d_tokens = transformer::backward(blocks, caches, d_out);
                for r in 0..self.prompt_len {
                    grad.row_mut(r).copy_from_slice(d_tokens.row(r));
                }
            }
        }
        Ok(grad)
    }
}
