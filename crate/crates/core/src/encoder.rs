//! Mean-pooled embedding encoder: `y = normalize(Pᵀ·mean(E[tokens]) + b)`.
//!
//! The same architecture backs all three roles. Cause and Effect encoders are
//! trained; the Semantic encoder is pretrained once and then only read.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::distributions::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::loss::{inbatch_softmax_loss_tempered, SimilarityKind};
use crate::matrix::{dot, norm, Matrix};
use crate::rng::stream_rng;
use crate::text::{encode_tokens, TokenSeq, Vocab, DEFAULT_MAX_LEN, PAD_ID, UNK_ID};
use crate::train::{adamw_step, AdamWConfig, OptimizerState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EncoderRole {
    Cause,
    Effect,
    Semantic,
}

impl EncoderRole {
    pub fn trainable(self) -> bool {
        !matches!(self, EncoderRole::Semantic)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EncoderRole::Cause => "cause",
            EncoderRole::Effect => "effect",
            EncoderRole::Semantic => "semantic",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    /// `V x d_emb` token embeddings; row 0 is padding.
    pub embedding: Matrix,
    /// `d_emb x d`.
    pub projection: Matrix,
    pub bias: Vec<f64>,
    pub normalize_output: bool,
}

/// Gradients with the same layout as [`EncoderParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads {
    pub embedding: Matrix,
    pub projection: Matrix,
    pub bias: Vec<f64>,
}

/// Batch of encoder outputs, one row per pair.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    pub vectors: Matrix,
    pub source_role: EncoderRole,
    pub pair_ids: Vec<String>,
}

impl EncoderParams {
    pub fn vocab_size(&self) -> usize {
        self.embedding.rows()
    }

    pub fn d_emb(&self) -> usize {
        self.embedding.cols()
    }

    pub fn d(&self) -> usize {
        self.projection.cols()
    }

    /// Checks internal shape consistency and finiteness.
    pub fn validate(&self) -> Result<()> {
        if self.projection.rows() != self.d_emb() {
            return Err(Error::DimensionMismatch {
                context: "projection rows",
                expected: self.d_emb(),
                found: self.projection.rows(),
            });
        }
        if self.bias.len() != self.d() {
            return Err(Error::DimensionMismatch {
                context: "bias length",
                expected: self.d(),
                found: self.bias.len(),
            });
        }
        if !(self.embedding.is_finite()
            && self.projection.is_finite()
            && self.bias.iter().all(|x| x.is_finite()))
        {
            return Err(Error::NonFinite("encoder parameters".into()));
        }
        Ok(())
    }

    pub fn zero_grads(&self) -> EncoderGrads {
        EncoderGrads {
            embedding: Matrix::zeros(self.vocab_size(), self.d_emb()),
            projection: Matrix::zeros(self.d_emb(), self.d()),
            bias: vec![0.0; self.d()],
        }
    }

    /// `(name, values)` for each parameter group, in serialization order.
    pub fn groups(&self) -> [(&'static str, &[f64]); 3] {
        [
            ("embedding", self.embedding.as_slice()),
            ("projection", self.projection.as_slice()),
            ("bias", &self.bias),
        ]
    }

    pub fn groups_mut(&mut self) -> [(&'static str, &mut [f64]); 3] {
        [
            ("embedding", self.embedding.as_mut_slice()),
            ("projection", self.projection.as_mut_slice()),
            ("bias", &mut self.bias),
        ]
    }
}

impl EncoderGrads {
    pub fn groups(&self) -> [(&'static str, &[f64]); 3] {
        [
            ("embedding", self.embedding.as_slice()),
            ("projection", self.projection.as_slice()),
            ("bias", &self.bias),
        ]
    }
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub pooled: Vec<f64>,
    pub pre_norm: Vec<f64>,
    pub output: Vec<f64>,
    /// Number of non-padding tokens averaged.
    pub count: usize,
    pub normalized: bool,
}

fn check_tokens(params: &EncoderParams, tokens: &TokenSeq) -> Result<()> {
    let v = params.vocab_size();
    match tokens.ids.iter().find(|&&id| id as usize >= v) {
        Some(&id) => Err(Error::DimensionMismatch {
            context: "token id out of vocabulary range",
            expected: v,
            found: id as usize,
        }),
        None => Ok(()),
    }
}

pub fn forward(params: &EncoderParams, tokens: &TokenSeq) -> Result<Forward> {
    check_tokens(params, tokens)?;
    if params.projection.rows() != params.d_emb() || params.bias.len() != params.d() {
        params.validate()?;
    }
    let (d_emb, d) = (params.d_emb(), params.d());
    let mut pooled = vec![0.0; d_emb];
    let mut count = 0usize;
    for &id in tokens.ids.iter().filter(|&&id| id != PAD_ID) {
        count += 1;
        for (p, e) in pooled.iter_mut().zip(params.embedding.row(id as usize)) {
            *p += e;
        }
    }
    if count > 0 {
        let inv = 1.0 / count as f64;
        pooled.iter_mut().for_each(|p| *p *= inv);
    }
    let mut pre_norm = params.bias.clone();
    for (j, &h) in pooled.iter().enumerate() {
        if h != 0.0 {
            for (z, w) in pre_norm.iter_mut().zip(params.projection.row(j)) {
                *z += h * w;
            }
        }
    }
    debug_assert_eq!(pre_norm.len(), d);
    let n = norm(&pre_norm);
    let normalized = params.normalize_output && n > 0.0;
    let output = if normalized {
        pre_norm.iter().map(|z| z / n).collect()
    } else {
        pre_norm.clone()
    };
    Ok(Forward {
        pooled,
        pre_norm,
        output,
        count,
        normalized,
    })
}

/// Encodes one token sequence into a `d`-vector.
pub fn encode(params: &EncoderParams, tokens: &TokenSeq) -> Result<Vec<f64>> {
    Ok(forward(params, tokens)?.output)
}

/// Adds the gradient of `upstream · encode(params, tokens)` into `grads`.
pub fn accumulate_grad(
    params: &EncoderParams,
    tokens: &TokenSeq,
    fwd: &Forward,
    upstream: &[f64],
    grads: &mut EncoderGrads,
) -> Result<()> {
    if upstream.len() != params.d() {
        return Err(Error::DimensionMismatch {
            context: "upstream gradient",
            expected: params.d(),
            found: upstream.len(),
        });
    }
    // Through y = z / |z|: dz = (g - y (y·g)) / |z|.
    let grad_z: Vec<f64> = if fwd.normalized {
        let n = norm(&fwd.pre_norm);
        let yg = dot(&fwd.output, upstream);
        upstream
            .iter()
            .zip(&fwd.output)
            .map(|(g, y)| (g - y * yg) / n)
            .collect()
    } else {
        upstream.to_vec()
    };
    for (b, g) in grads.bias.iter_mut().zip(&grad_z) {
        *b += g;
    }
    for (j, &h) in fwd.pooled.iter().enumerate() {
        if h != 0.0 {
            for (p, g) in grads.projection.row_mut(j).iter_mut().zip(&grad_z) {
                *p += h * g;
            }
        }
    }
    if fwd.count == 0 {
        return Ok(());
    }
    let inv = 1.0 / fwd.count as f64;
    let grad_pooled: Vec<f64> = (0..params.d_emb())
        .map(|j| dot(params.projection.row(j), &grad_z) * inv)
        .collect();
    for &id in tokens.ids.iter().filter(|&&id| id != PAD_ID) {
        for (e, g) in grads
            .embedding
            .row_mut(id as usize)
            .iter_mut()
            .zip(&grad_pooled)
        {
            *e += g;
        }
    }
    Ok(())
}

/// Exact gradient of `upstream · encode(params, tokens)` with respect to every
/// parameter. Rows of tokens not in `tokens` stay zero.
pub fn encode_grad(
    params: &EncoderParams,
    tokens: &TokenSeq,
    upstream: &[f64],
) -> Result<EncoderGrads> {
    let fwd = forward(params, tokens)?;
    let mut grads = params.zero_grads();
    accumulate_grad(params, tokens, &fwd, upstream, &mut grads)?;
    Ok(grads)
}

/// Uniform `[-1/√d_emb, 1/√d_emb]` weights, zero bias, zero padding row.
pub fn init_params(vocab_size: usize, d_emb: usize, d: usize, seed: u64) -> Result<EncoderParams> {
    if vocab_size == 0 || d_emb == 0 || d == 0 {
        return Err(Error::InvalidConfig(
            "encoder dimensions must be at least 1".into(),
        ));
    }
    let bound = 1.0 / libm::sqrt(d_emb as f64);
    let dist = Uniform::new_inclusive(-bound, bound);
    let mut rng = stream_rng(seed, 0xe9c);
    let mut embedding = Matrix::zeros(vocab_size, d_emb);
    for x in embedding.as_mut_slice().iter_mut().skip(d_emb) {
        *x = dist.sample(&mut rng);
    }
    let mut projection = Matrix::zeros(d_emb, d);
    for x in projection.as_mut_slice() {
        *x = dist.sample(&mut rng);
    }
    Ok(EncoderParams {
        embedding,
        projection,
        bias: vec![0.0; d],
        normalize_output: true,
    })
}

/// Encodes each sentence into one row.
pub fn encode_texts<S: AsRef<str>>(
    params: &EncoderParams,
    vocab: &Vocab,
    texts: &[S],
    max_len: usize,
) -> Result<Matrix> {
    let mut m = Matrix::zeros(texts.len(), params.d());
    for (i, t) in texts.iter().enumerate() {
        let v = encode(params, &encode_tokens(vocab, t.as_ref(), max_len))?;
        m.row_mut(i).copy_from_slice(&v);
    }
    Ok(m)
}

/// Settings for self-supervised pretraining of the Semantic encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticPretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Per-token drop probability when forming each view.
    pub dropout: f64,
    pub d_emb: usize,
    pub d: usize,
    pub max_len: usize,
    pub normalize_output: bool,
    pub similarity: SimilarityKind,
    /// Softmax temperature of the view-matching objective.
    pub temperature: f64,
    pub optimizer: AdamWConfig,
}

impl Default for SemanticPretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 64,
            dropout: 0.3,
            d_emb: 64,
            d: 64,
            max_len: DEFAULT_MAX_LEN,
            normalize_output: true,
            similarity: SimilarityKind::Dot,
            temperature: 0.05,
            optimizer: AdamWConfig {
                learning_rate: 1e-3,
                ..AdamWConfig::default()
            },
        }
    }
}

/// Word-dropout view: each token kept with probability `1 - rate`, at least one kept.
pub fn dropout_view<R: Rng>(tokens: &TokenSeq, rate: f64, rng: &mut R) -> TokenSeq {
    let mut ids: Vec<u32> = tokens
        .ids
        .iter()
        .copied()
        .filter(|_| !rng.gen_bool(rate.clamp(0.0, 1.0)))
        .collect();
    if ids.is_empty() {
        ids.push(tokens.ids[rng.gen_range(0..tokens.ids.len())]);
    }
    TokenSeq {
        original_length: tokens.original_length,
        ids,
    }
}

/// Trains a fresh encoder so that two word-dropout views of one sentence
/// identify each other against the rest of the batch (symmetric in-batch
/// softmax, gradients through both views).
pub fn pretrain_semantic<S: AsRef<str>>(
    corpus: &[S],
    vocab: &Vocab,
    cfg: &SemanticPretrainConfig,
    seed: u64,
) -> Result<EncoderParams> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput("semantic pretraining corpus"));
    }
    let mut params = init_params(vocab.len(), cfg.d_emb, cfg.d, seed)?;
    params.normalize_output = cfg.normalize_output;
    if cfg.epochs == 0 {
        return Ok(params);
    }
    let tokens: Vec<TokenSeq> = corpus
        .iter()
        .map(|s| encode_tokens(vocab, s.as_ref(), cfg.max_len))
        .collect();
    let batch = cfg.batch_size.clamp(1, tokens.len());
    let mut state = OptimizerState::new(&params);
    let mut order: Vec<usize> = (0..tokens.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = stream_rng(seed, 0x1000 + epoch as u64);
        order.shuffle(&mut rng);
        for chunk in order.chunks_exact(batch) {
            let a: Vec<TokenSeq> = chunk
                .iter()
                .map(|&i| dropout_view(&tokens[i], cfg.dropout, &mut rng))
                .collect();
            let b: Vec<TokenSeq> = chunk
                .iter()
                .map(|&i| dropout_view(&tokens[i], cfg.dropout, &mut rng))
                .collect();
            let fa = a
                .iter()
                .map(|t| forward(&params, t))
                .collect::<Result<Vec<_>>>()?;
            let fb = b
                .iter()
                .map(|t| forward(&params, t))
                .collect::<Result<Vec<_>>>()?;
            let ea =
                Matrix::from_rows(&fa.iter().map(|f| f.output.as_slice()).collect::<Vec<_>>())?;
            let eb =
                Matrix::from_rows(&fb.iter().map(|f| f.output.as_slice()).collect::<Vec<_>>())?;
            let (ab, ab_keys) =
                inbatch_softmax_loss_tempered(&ea, &eb, cfg.similarity, cfg.temperature)?;
            let (ba, ba_keys) =
                inbatch_softmax_loss_tempered(&eb, &ea, cfg.similarity, cfg.temperature)?;
            let mut grads = params.zero_grads();
            for i in 0..chunk.len() {
                let ga: Vec<f64> = ab
                    .grad_q
                    .row(i)
                    .iter()
                    .zip(ba_keys.row(i))
                    .map(|(x, y)| 0.5 * (x + y))
                    .collect();
                let gb: Vec<f64> = ba
                    .grad_q
                    .row(i)
                    .iter()
                    .zip(ab_keys.row(i))
                    .map(|(x, y)| 0.5 * (x + y))
                    .collect();
                accumulate_grad(&params, &a[i], &fa[i], &ga, &mut grads)?;
                accumulate_grad(&params, &b[i], &fb[i], &gb, &mut grads)?;
            }
            adamw_step(&mut params, &grads, &mut state, &cfg.optimizer)?;
        }
    }
    Ok(params)
}

/// Embedding of a text that normalizes to nothing (the UNK token alone).
pub fn unk_vector(params: &EncoderParams) -> Result<Vec<f64>> {
    encode(
        params,
        &TokenSeq {
            ids: vec![UNK_ID],
            original_length: 0,
        },
    )
}
