//! In-batch softmax contrastive losses.
//!
//! For queries `q` and keys `k` aligned by row, example `i` has loss
//! `-log softmax_j s(q_i, k_j)` at `j = i`. Keys always come from the frozen
//! semantic encoder, so only query gradients are produced for training. The
//! combined objective is
//!
//! ```text
//! L = L(e1', e2'') + L(e2', e1'') + β·(L(e1', e1'') + L(e2', e2''))
//! ```
//!
//! Reduction is the batch mean and the softmax has unit temperature.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::{dot, norm, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub enum SimilarityKind {
    /// Inner product. On L2-normalized encoder outputs this equals cosine.
    #[default]
    Dot,
    /// Cosine, with similarity 0 when either vector is zero.
    Cosine,
}

impl SimilarityKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SimilarityKind::Dot => "dot",
            SimilarityKind::Cosine => "cosine",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "dot" => Some(SimilarityKind::Dot),
            "cosine" => Some(SimilarityKind::Cosine),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Weight of the two semantic-preservation terms.
    pub beta: f64,
    pub similarity: SimilarityKind,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            similarity: SimilarityKind::Dot,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    /// Mean of `per_example`.
    pub value: f64,
    /// Gradient of `value` with respect to the query rows.
    pub grad_q: Matrix,
    pub per_example: Vec<f64>,
}

fn check_dims(u: &[f64], v: &[f64]) -> Result<()> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            context: "similarity operands",
            expected: u.len(),
            found: v.len(),
        });
    }
    Ok(())
}

pub fn similarity(kind: SimilarityKind, u: &[f64], v: &[f64]) -> Result<f64> {
    check_dims(u, v)?;
    Ok(similarity_unchecked(kind, u, v))
}

pub(crate) fn similarity_unchecked(kind: SimilarityKind, u: &[f64], v: &[f64]) -> f64 {
    match kind {
        SimilarityKind::Dot => dot(u, v),
        SimilarityKind::Cosine => {
            let (nu, nv) = (norm(u), norm(v));
            if nu == 0.0 || nv == 0.0 {
                0.0
            } else {
                dot(u, v) / (nu * nv)
            }
        }
    }
}

/// Adds `scale · ∂s(u, v)/∂u` into `out`.
fn add_similarity_grad(kind: SimilarityKind, u: &[f64], v: &[f64], scale: f64, out: &mut [f64]) {
    match kind {
        SimilarityKind::Dot => {
            for (o, x) in out.iter_mut().zip(v) {
                *o += scale * x;
            }
        }
        SimilarityKind::Cosine => {
            let (nu, nv) = (norm(u), norm(v));
            if nu == 0.0 || nv == 0.0 {
                return;
            }
            let cos = dot(u, v) / (nu * nv);
            for ((o, x), y) in out.iter_mut().zip(v).zip(u) {
                *o += scale * (x / (nu * nv) - cos * y / (nu * nu));
            }
        }
    }
}

/// Row-wise softmax cross-entropy with the diagonal as target.
///
/// Returns per-row losses and the softmax probabilities. Uses max-subtracted
/// log-sum-exp, so adding a constant to a row leaves its loss unchanged.
pub fn softmax_xent_rows(scores: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    if scores.rows() != scores.cols() {
        return Err(Error::DimensionMismatch {
            context: "square score matrix",
            expected: scores.rows(),
            found: scores.cols(),
        });
    }
    let b = scores.rows();
    let mut losses = Vec::with_capacity(b);
    let mut probs = Matrix::zeros(b, b);
    for i in 0..b {
        let row = scores.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        let p = probs.row_mut(i);
        for (pj, s) in p.iter_mut().zip(row) {
            *pj = libm::exp(s - max);
            sum += *pj;
        }
        p.iter_mut().for_each(|x| *x /= sum);
        // log-sum-exp minus the target score, computed relative to the max.
        losses.push(libm::log(sum) - (row[i] - max));
    }
    Ok((losses, probs))
}

fn check_batch(queries: &Matrix, keys: &Matrix) -> Result<()> {
    if queries.rows() == 0 {
        return Err(Error::EmptyInput("loss batch"));
    }
    if queries.rows() != keys.rows() {
        return Err(Error::DimensionMismatch {
            context: "batch size",
            expected: queries.rows(),
            found: keys.rows(),
        });
    }
    if queries.cols() != keys.cols() {
        return Err(Error::DimensionMismatch {
            context: "embedding width",
            expected: queries.cols(),
            found: keys.cols(),
        });
    }
    if !queries.is_finite() {
        return Err(Error::NonFinite("loss queries".into()));
    }
    if !keys.is_finite() {
        return Err(Error::NonFinite("loss keys".into()));
    }
    Ok(())
}

fn score_matrix(queries: &Matrix, keys: &Matrix, kind: SimilarityKind) -> Matrix {
    let b = queries.rows();
    let mut scores = Matrix::zeros(b, b);
    for i in 0..b {
        for j in 0..b {
            scores.row_mut(i)[j] = similarity_unchecked(kind, queries.row(i), keys.row(j));
        }
    }
    scores
}

fn softmax_loss(
    queries: &Matrix,
    keys: &Matrix,
    kind: SimilarityKind,
    inv_temp: f64,
    key_grad: bool,
) -> Result<(LossOutput, Option<Matrix>)> {
    check_batch(queries, keys)?;
    let mut scores = score_matrix(queries, keys, kind);
    if inv_temp != 1.0 {
        scores
            .as_mut_slice()
            .iter_mut()
            .for_each(|s| *s *= inv_temp);
    }
    let (per_example, probs) = softmax_xent_rows(&scores)?;
    let b = queries.rows();
    let inv_b = 1.0 / b as f64;
    let mut grad_q = Matrix::zeros(b, queries.cols());
    let mut grad_k = key_grad.then(|| Matrix::zeros(b, keys.cols()));
    for i in 0..b {
        for j in 0..b {
            let coeff = (probs.get(i, j) - if i == j { 1.0 } else { 0.0 }) * inv_b * inv_temp;
            if coeff == 0.0 {
                continue;
            }
            add_similarity_grad(kind, queries.row(i), keys.row(j), coeff, grad_q.row_mut(i));
            if let Some(gk) = grad_k.as_mut() {
                // s is symmetric in its arguments for both kinds.
                add_similarity_grad(kind, keys.row(j), queries.row(i), coeff, gk.row_mut(j));
            }
        }
    }
    let value = per_example.iter().sum::<f64>() * inv_b;
    Ok((
        LossOutput {
            value,
            grad_q,
            per_example,
        },
        grad_k,
    ))
}

/// In-batch softmax loss of `queries` against `keys`, gradient on queries only.
pub fn inbatch_softmax_loss(
    queries: &Matrix,
    keys: &Matrix,
    kind: SimilarityKind,
) -> Result<LossOutput> {
    Ok(softmax_loss(queries, keys, kind, 1.0, false)?.0)
}

/// As [`inbatch_softmax_loss`], additionally returning the gradient with
/// respect to the keys (used when both sides come from one trainable encoder).
pub fn inbatch_softmax_loss_with_key_grad(
    queries: &Matrix,
    keys: &Matrix,
    kind: SimilarityKind,
) -> Result<(LossOutput, Matrix)> {
    inbatch_softmax_loss_tempered(queries, keys, kind, 1.0)
}

/// As [`inbatch_softmax_loss_with_key_grad`] with logits `s / temperature`.
pub fn inbatch_softmax_loss_tempered(
    queries: &Matrix,
    keys: &Matrix,
    kind: SimilarityKind,
    temperature: f64,
) -> Result<(LossOutput, Matrix)> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidConfig(
            "temperature must be positive and finite".into(),
        ));
    }
    let (out, gk) = softmax_loss(queries, keys, kind, 1.0 / temperature, true)?;
    Ok((out, gk.expect("requested")))
}

/// Values of the four terms of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    /// Cause encoder against semantic effects.
    pub causal: f64,
    /// Effect encoder against semantic causes.
    pub effect: f64,
    /// Cause encoder against semantic causes.
    pub semantic_cause: f64,
    /// Effect encoder against semantic effects.
    pub semantic_effect: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TotalLoss {
    pub value: f64,
    pub terms: LossTerms,
    pub per_example: Vec<f64>,
    /// Gradient of `value` with respect to the cause-encoder outputs.
    pub grad_cause: Matrix,
    /// Gradient of `value` with respect to the effect-encoder outputs.
    pub grad_effect: Matrix,
}

/// Combined causal + β-weighted semantic loss over one aligned batch.
///
/// `e1p`/`e2p` are Cause/Effect encoder outputs, `e1pp`/`e2pp` the frozen
/// Semantic encoder outputs for the same cause/effect texts.
pub fn total_loss(
    e1p: &Matrix,
    e2p: &Matrix,
    e1pp: &Matrix,
    e2pp: &Matrix,
    cfg: &LossConfig,
) -> Result<TotalLoss> {
    let b = e1p.rows();
    for (name, m) in [("e2p", e2p), ("e1pp", e1pp), ("e2pp", e2pp)] {
        if m.rows() != b {
            return Err(Error::InvalidConfig(format!(
                "batch size mismatch: e1p has {b} rows, {name} has {}",
                m.rows()
            )));
        }
    }
    if !cfg.beta.is_finite() || cfg.beta < 0.0 {
        return Err(Error::InvalidConfig(
            "beta must be finite and non-negative".into(),
        ));
    }
    let kind = cfg.similarity;
    let causal = inbatch_softmax_loss(e1p, e2pp, kind)?;
    let effect = inbatch_softmax_loss(e2p, e1pp, kind)?;
    let sem_c = inbatch_softmax_loss(e1p, e1pp, kind)?;
    let sem_e = inbatch_softmax_loss(e2p, e2pp, kind)?;
    let beta = cfg.beta;

    let value = causal.value + effect.value + beta * (sem_c.value + sem_e.value);
    let per_example = (0..b)
        .map(|i| {
            causal.per_example[i]
                + effect.per_example[i]
                + beta * (sem_c.per_example[i] + sem_e.per_example[i])
        })
        .collect();
    let combine = |main: &Matrix, sem: &Matrix| -> Matrix {
        let data = main
            .as_slice()
            .iter()
            .zip(sem.as_slice())
            .map(|(g, s)| g + beta * s)
            .collect();
        Matrix::from_vec(main.rows(), main.cols(), data).expect("same shape")
    };
    Ok(TotalLoss {
        value,
        terms: LossTerms {
            causal: causal.value,
            effect: effect.value,
            semantic_cause: sem_c.value,
            semantic_effect: sem_e.value,
        },
        per_example,
        grad_cause: combine(&causal.grad_q, &sem_c.grad_q),
        grad_effect: combine(&effect.grad_q, &sem_e.grad_q),
    })
}
