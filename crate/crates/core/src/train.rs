//! AdamW optimization of the Cause and Effect encoders against frozen
//! semantic targets, with validation-based checkpoint selection.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::corpus::CausalPair;
use crate::encoder::{
    accumulate_grad, encode_texts, forward, init_params, EncoderGrads, EncoderParams,
};
use crate::error::{Error, Result};
use crate::index::VectorIndex;
use crate::loss::{total_loss, LossConfig};
use crate::matrix::Matrix;
use crate::rng::{derive_seed, stream_rng};
use crate::text::{encode_tokens, TokenSeq, Vocab, DEFAULT_MAX_LEN};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First/second moments per parameter group plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: [Vec<f64>; 3],
    pub v: [Vec<f64>; 3],
    pub t: u64,
}

impl OptimizerState {
    pub fn new(params: &EncoderParams) -> Self {
        let zeros = |i: usize| vec![0.0; params.groups()[i].1.len()];
        Self {
            m: core::array::from_fn(zeros),
            v: core::array::from_fn(zeros),
            t: 0,
        }
    }
}

/// One AdamW update of a flat parameter slice at (already incremented) step `t`.
pub fn adamw_update(
    w: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    cfg: &AdamWConfig,
) {
    let bc1 = 1.0 - libm::pow(cfg.beta1, t as f64);
    let bc2 = 1.0 - libm::pow(cfg.beta2, t as f64);
    for i in 0..w.len() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        w[i] -=
            cfg.learning_rate * (m_hat / (libm::sqrt(v_hat) + cfg.eps) + cfg.weight_decay * w[i]);
    }
}

/// Applies one decoupled-weight-decay Adam step to every parameter group.
/// Parameters are untouched if any gradient is non-finite.
pub fn adamw_step(
    params: &mut EncoderParams,
    grads: &EncoderGrads,
    state: &mut OptimizerState,
    cfg: &AdamWConfig,
) -> Result<()> {
    for ((name, g), (_, w)) in grads.groups().iter().zip(params.groups()) {
        if g.len() != w.len() {
            return Err(Error::DimensionMismatch {
                context: "gradient group",
                expected: w.len(),
                found: g.len(),
            });
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("{name} gradient")));
        }
    }
    state.t += 1;
    let t = state.t;
    let grads = grads.groups();
    for (i, (_, w)) in params.groups_mut().into_iter().enumerate() {
        adamw_update(w, grads[i].1, &mut state.m[i], &mut state.v[i], t, cfg);
    }
    Ok(())
}

/// How the trainable encoders start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EncoderInit {
    /// Copies of the semantic encoder (all three share initial weights).
    #[default]
    FromSemantic,
    /// Fresh seeded random weights.
    Random,
}

impl EncoderInit {
    pub fn as_str(self) -> &'static str {
        match self {
            EncoderInit::FromSemantic => "semantic",
            EncoderInit::Random => "random",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub epochs: usize,
    pub loss: LossConfig,
    pub seed: u64,
    /// Used only with [`EncoderInit::Random`]; copies inherit semantic dims.
    pub d_emb: usize,
    pub d: usize,
    pub max_len: usize,
    pub normalize_output: bool,
    pub init: EncoderInit,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            optimizer: AdamWConfig::default(),
            epochs: 50,
            loss: LossConfig::default(),
            seed: 0,
            d_emb: 64,
            d: 64,
            max_len: DEFAULT_MAX_LEN,
            normalize_output: true,
            init: EncoderInit::FromSemantic,
        }
    }
}

impl TrainConfig {
    /// Batch 64, learning rate 1e-5, 500 epochs.
    pub fn with_paper_hparams(mut self) -> Self {
        self.batch_size = 64;
        self.optimizer.learning_rate = 1e-5;
        self.epochs = 500;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        let lr = self.optimizer.learning_rate;
        if !lr.is_finite() || lr <= 0.0 {
            return Err(Error::InvalidConfig(
                "learning_rate must be finite and positive".into(),
            ));
        }
        if !self.loss.beta.is_finite() || self.loss.beta < 0.0 {
            return Err(Error::InvalidConfig(
                "beta must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Tokenized pairs with their precomputed frozen semantic targets.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub cause_tokens: Vec<TokenSeq>,
    pub effect_tokens: Vec<TokenSeq>,
    /// Semantic encoding of each cause text.
    pub cause_targets: Matrix,
    /// Semantic encoding of each effect text.
    pub effect_targets: Matrix,
}

impl TrainingSet {
    pub fn new(
        pairs: &[CausalPair],
        vocab: &Vocab,
        semantic: &EncoderParams,
        max_len: usize,
    ) -> Result<Self> {
        let causes: Vec<&str> = pairs.iter().map(|p| p.cause_text.as_str()).collect();
        let effects: Vec<&str> = pairs.iter().map(|p| p.effect_text.as_str()).collect();
        Ok(Self {
            cause_tokens: causes
                .iter()
                .map(|t| encode_tokens(vocab, t, max_len))
                .collect(),
            effect_tokens: effects
                .iter()
                .map(|t| encode_tokens(vocab, t, max_len))
                .collect(),
            cause_targets: encode_texts(semantic, vocab, &causes, max_len)?,
            effect_targets: encode_texts(semantic, vocab, &effects, max_len)?,
        })
    }

    pub fn len(&self) -> usize {
        self.cause_tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cause_tokens.is_empty()
    }
}

/// The two trainable encoders and their optimizer states.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainableEncoders {
    pub cause: EncoderParams,
    pub effect: EncoderParams,
    pub cause_state: OptimizerState,
    pub effect_state: OptimizerState,
}

impl TrainableEncoders {
    pub fn new(cause: EncoderParams, effect: EncoderParams) -> Self {
        Self {
            cause_state: OptimizerState::new(&cause),
            effect_state: OptimizerState::new(&effect),
            cause,
            effect,
        }
    }

    pub fn steps(&self) -> u64 {
        self.cause_state.t
    }
}

fn forward_batch(
    params: &EncoderParams,
    tokens: &[&TokenSeq],
) -> Result<(Matrix, Vec<crate::encoder::Forward>)> {
    let fwd = tokens
        .iter()
        .map(|t| forward(params, t))
        .collect::<Result<Vec<_>>>()?;
    let m = Matrix::from_rows(&fwd.iter().map(|f| f.output.as_slice()).collect::<Vec<_>>())?;
    Ok((m, fwd))
}

/// Total loss and encoder gradients for the batch `indices`.
pub fn batch_loss_and_grads(
    data: &TrainingSet,
    cause: &EncoderParams,
    effect: &EncoderParams,
    indices: &[usize],
    loss: &LossConfig,
) -> Result<(f64, EncoderGrads, EncoderGrads)> {
    let ct: Vec<&TokenSeq> = indices.iter().map(|&i| &data.cause_tokens[i]).collect();
    let et: Vec<&TokenSeq> = indices.iter().map(|&i| &data.effect_tokens[i]).collect();
    let (e1p, cf) = forward_batch(cause, &ct)?;
    let (e2p, ef) = forward_batch(effect, &et)?;
    let e1pp = data.cause_targets.select_rows(indices);
    let e2pp = data.effect_targets.select_rows(indices);
    let out = total_loss(&e1p, &e2p, &e1pp, &e2pp, loss)?;
    if !out.value.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    let mut gc = cause.zero_grads();
    let mut ge = effect.zero_grads();
    for (row, (t, f)) in ct.iter().zip(&cf).enumerate() {
        accumulate_grad(cause, t, f, out.grad_cause.row(row), &mut gc)?;
    }
    for (row, (t, f)) in et.iter().zip(&ef).enumerate() {
        accumulate_grad(effect, t, f, out.grad_effect.row(row), &mut ge)?;
    }
    Ok((out.value, gc, ge))
}

/// One pass over the training pairs in a seeded order keyed on
/// `(cfg.seed, epoch)`. Only full batches are used; returns the mean batch loss.
pub fn train_epoch(
    data: &TrainingSet,
    enc: &mut TrainableEncoders,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyInput("training split"));
    }
    if data.len() < cfg.batch_size {
        return Err(Error::InvalidConfig(format!(
            "training split has {} pairs, fewer than one batch of {}",
            data.len(),
            cfg.batch_size
        )));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut stream_rng(derive_seed(cfg.seed, 0x7a1), epoch as u64));
    let mut total = 0.0;
    let mut batches = 0usize;
    for batch in order.chunks_exact(cfg.batch_size) {
        let (value, gc, ge) =
            batch_loss_and_grads(data, &enc.cause, &enc.effect, batch, &cfg.loss)?;
        adamw_step(&mut enc.cause, &gc, &mut enc.cause_state, &cfg.optimizer)?;
        adamw_step(&mut enc.effect, &ge, &mut enc.effect_state, &cfg.optimizer)?;
        total += value;
        batches += 1;
    }
    Ok(total / batches as f64)
}

/// Hit@1 of `queries[i]` retrieving `keys[i]` among all keys.
pub fn hit_at_1(queries: &Matrix, keys: &Matrix, cfg: &LossConfig) -> Result<f64> {
    if queries.rows() == 0 {
        return Err(Error::EmptyInput("validation split"));
    }
    let ids: Vec<String> = (0..keys.rows()).map(|i| format!("{i:012}")).collect();
    let index = VectorIndex::from_matrix(
        ids.clone(),
        keys,
        cfg.similarity,
        crate::index::DEFAULT_CHUNK_ROWS,
    )?;
    let results = index.batch_top_k(&ids, queries, 1)?;
    let hits = results
        .iter()
        .filter(|r| r.hits.first().is_some_and(|h| h.doc_id == r.query_id))
        .count();
    Ok(hits as f64 / queries.rows() as f64)
}

/// Hit@1 of cause -> effect retrieval where the pool is exactly the
/// validation effects encoded by the semantic encoder.
pub fn validate(
    validation: &[CausalPair],
    cause: &EncoderParams,
    semantic: &EncoderParams,
    vocab: &Vocab,
    cfg: &TrainConfig,
) -> Result<f64> {
    let causes: Vec<&str> = validation.iter().map(|p| p.cause_text.as_str()).collect();
    let effects: Vec<&str> = validation.iter().map(|p| p.effect_text.as_str()).collect();
    let q = encode_texts(cause, vocab, &causes, cfg.max_len)?;
    let k = encode_texts(semantic, vocab, &effects, cfg.max_len)?;
    hit_at_1(&q, &k, &cfg.loss)
}

/// Run facts recorded alongside checkpoint weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub beta: f64,
    pub similarity: crate::loss::SimilarityKind,
    /// Optimizer steps taken when the checkpoint was captured.
    pub step: u64,
    /// Validation Hit@1 (cause -> effect, in-split pool).
    pub val_metric: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub cause: EncoderParams,
    pub effect: EncoderParams,
    pub semantic: EncoderParams,
    pub vocab: Vocab,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn normalize_output(&self) -> bool {
        self.semantic.normalize_output
    }

    /// Checks that all three encoders agree on shapes and match the vocabulary.
    pub fn validate(&self) -> Result<()> {
        for p in [&self.cause, &self.effect, &self.semantic] {
            p.validate()?;
            if p.vocab_size() != self.vocab.len() {
                return Err(Error::DimensionMismatch {
                    context: "encoder vocabulary size",
                    expected: self.vocab.len(),
                    found: p.vocab_size(),
                });
            }
            if p.d_emb() != self.semantic.d_emb() || p.d() != self.semantic.d() {
                return Err(Error::DimensionMismatch {
                    context: "encoder width",
                    expected: self.semantic.d(),
                    found: p.d(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_metric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub best: Checkpoint,
    pub history: Vec<EpochRecord>,
}

/// Initial Cause/Effect encoders for a run.
pub fn initial_encoders(
    semantic: &EncoderParams,
    cfg: &TrainConfig,
) -> Result<(EncoderParams, EncoderParams)> {
    let (mut cause, mut effect) = match cfg.init {
        EncoderInit::FromSemantic => (semantic.clone(), semantic.clone()),
        EncoderInit::Random => {
            let v = semantic.vocab_size();
            (
                init_params(v, cfg.d_emb, cfg.d, derive_seed(cfg.seed, 1))?,
                init_params(v, cfg.d_emb, cfg.d, derive_seed(cfg.seed, 2))?,
            )
        }
    };
    if cause.d() != semantic.d() {
        return Err(Error::DimensionMismatch {
            context: "trainable encoder output width vs semantic encoder",
            expected: semantic.d(),
            found: cause.d(),
        });
    }
    cause.normalize_output = cfg.normalize_output;
    effect.normalize_output = cfg.normalize_output;
    Ok((cause, effect))
}

/// Trains for `cfg.epochs` epochs, validating after each, and returns the
/// checkpoint with the highest validation Hit@1 (ties keep the earlier one;
/// the untrained initial state is a candidate).
pub fn fit(
    train: &[CausalPair],
    validation: &[CausalPair],
    semantic: &EncoderParams,
    vocab: &Vocab,
    cfg: &TrainConfig,
) -> Result<FitReport> {
    cfg.validate()?;
    if validation.is_empty() {
        return Err(Error::EmptyInput("validation split"));
    }
    if semantic.vocab_size() != vocab.len() {
        return Err(Error::DimensionMismatch {
            context: "semantic encoder vocabulary size",
            expected: vocab.len(),
            found: semantic.vocab_size(),
        });
    }
    let (cause, effect) = initial_encoders(semantic, cfg)?;
    let mut enc = TrainableEncoders::new(cause, effect);
    let snapshot = |enc: &TrainableEncoders, val_metric: f64| Checkpoint {
        cause: enc.cause.clone(),
        effect: enc.effect.clone(),
        semantic: semantic.clone(),
        vocab: vocab.clone(),
        meta: CheckpointMeta {
            beta: cfg.loss.beta,
            similarity: cfg.loss.similarity,
            step: enc.steps(),
            val_metric,
            seed: cfg.seed,
        },
    };
    let initial = validate(validation, &enc.cause, semantic, vocab, cfg)?;
    let mut best = snapshot(&enc, initial);
    let mut history = Vec::with_capacity(cfg.epochs);
    if cfg.epochs == 0 {
        return Ok(FitReport { best, history });
    }
    let data = TrainingSet::new(train, vocab, semantic, cfg.max_len)?;
    for epoch in 0..cfg.epochs {
        let loss = train_epoch(&data, &mut enc, cfg, epoch)?;
        let val_metric = validate(validation, &enc.cause, semantic, vocab, cfg)?;
        history.push(EpochRecord {
            epoch,
            loss,
            val_metric,
        });
        if val_metric > best.meta.val_metric {
            best = snapshot(&enc, val_metric);
        }
    }
    Ok(FitReport { best, history })
}
