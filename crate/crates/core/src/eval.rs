//! Ranking metrics (binary relevance), relaxed answer matching, and
//! experiment drivers for the retrieval tasks.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use crate::corpus::{build_pool, CausalPair, DatasetSplit, PoolEntry};
use crate::encoder::{encode_texts, EncoderParams};
use crate::error::{Error, Result};
use crate::index::{embed_pool, IndexBuilder, RetrievalResult, DEFAULT_CHUNK_ROWS};
use crate::text::{normalize, Vocab};
use crate::train::{fit, Checkpoint, TrainConfig};

pub const DEFAULT_FUZZY_RECALL: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryJudgment {
    pub query_id: String,
    pub gold_doc_ids: BTreeSet<String>,
    pub answer_text: Option<String>,
}

impl QueryJudgment {
    pub fn single(query_id: impl Into<String>, gold: impl Into<String>) -> Self {
        Self {
            query_id: query_id.into(),
            gold_doc_ids: [gold.into()].into_iter().collect(),
            answer_text: None,
        }
    }
}

fn first_gold_rank(result: &RetrievalResult, j: &QueryJudgment, k: usize) -> Option<usize> {
    result
        .hits
        .iter()
        .take(k)
        .position(|h| j.gold_doc_ids.contains(&h.doc_id))
        .map(|p| p + 1)
}

/// 1 if any gold document is within the top `k`, else 0.
pub fn hit_at_k(result: &RetrievalResult, j: &QueryJudgment, k: usize) -> f64 {
    if first_gold_rank(result, j, k).is_some() {
        1.0
    } else {
        0.0
    }
}

/// Reciprocal rank of the first gold document within the top `k`, else 0.
pub fn mrr_at_k(result: &RetrievalResult, j: &QueryJudgment, k: usize) -> f64 {
    first_gold_rank(result, j, k).map_or(0.0, |r| 1.0 / r as f64)
}

fn discount(rank: usize) -> f64 {
    1.0 / libm::log2(rank as f64 + 1.0)
}

/// Binary-relevance nDCG@k. The ideal DCG places all `|gold|` relevant
/// documents first and is not truncated at `k`, which keeps nDCG@k
/// non-decreasing in `k`.
pub fn ndcg_at_k(result: &RetrievalResult, j: &QueryJudgment, k: usize) -> f64 {
    let idcg: f64 = (1..=j.gold_doc_ids.len()).map(discount).sum();
    if idcg == 0.0 {
        return 0.0;
    }
    let dcg: f64 = result
        .hits
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, h)| j.gold_doc_ids.contains(&h.doc_id))
        .map(|(i, _)| discount(i + 1))
        .sum();
    dcg / idcg
}

/// True if the normalized answer occurs in the normalized passage, or at
/// least `min_recall` of the answer tokens occur among the passage tokens.
pub fn fuzzy_match(answer: &str, passage: &str, min_recall: f64) -> bool {
    let a = normalize(answer);
    if a.is_empty() {
        return false;
    }
    let p = normalize(passage);
    if p.contains(a.as_str()) {
        return true;
    }
    let passage_tokens: BTreeSet<&str> = p.split(' ').collect();
    let answer_tokens: Vec<&str> = a.split(' ').collect();
    let found = answer_tokens
        .iter()
        .filter(|t| passage_tokens.contains(*t))
        .count();
    found as f64 / answer_tokens.len() as f64 >= min_recall
}

/// Mean metrics over a query set.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    pub n_queries: usize,
    pub hit: BTreeMap<usize, f64>,
    pub mrr: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
    pub fingerprint: String,
}

impl MetricsReport {
    pub fn hit_at(&self, k: usize) -> f64 {
        self.hit.get(&k).copied().unwrap_or(f64::NAN)
    }

    pub fn mrr_at(&self, k: usize) -> f64 {
        self.mrr.get(&k).copied().unwrap_or(f64::NAN)
    }

    pub fn ndcg_at(&self, k: usize) -> f64 {
        self.ndcg.get(&k).copied().unwrap_or(f64::NAN)
    }
}

/// Averages Hit/MRR/nDCG at each `k` over all judged queries. A judged query
/// with no result scores zero; results for unjudged queries are ignored.
pub fn evaluate_run(
    results: &[RetrievalResult],
    judgments: &[QueryJudgment],
    ks: &[usize],
) -> Result<MetricsReport> {
    let mut by_query: BTreeMap<&str, &RetrievalResult> = BTreeMap::new();
    for r in results {
        if by_query.insert(r.query_id.as_str(), r).is_some() {
            return Err(Error::DuplicateId(r.query_id.clone()));
        }
    }
    let ks: BTreeSet<usize> = ks.iter().copied().filter(|&k| k > 0).collect();
    let mut report = MetricsReport {
        n_queries: judgments.len(),
        ..Default::default()
    };
    for &k in &ks {
        let (mut h, mut m, mut n) = (0.0, 0.0, 0.0);
        for j in judgments {
            if let Some(r) = by_query.get(j.query_id.as_str()) {
                h += hit_at_k(r, j, k);
                m += mrr_at_k(r, j, k);
                n += ndcg_at_k(r, j, k);
            }
        }
        let denom = judgments.len().max(1) as f64;
        report.hit.insert(k, h / denom);
        report.mrr.insert(k, m / denom);
        report.ndcg.insert(k, n / denom);
    }
    Ok(report)
}

/// Element-wise mean of several reports (e.g. one per seed).
pub fn mean_report(reports: &[MetricsReport]) -> MetricsReport {
    let mut out = MetricsReport::default();
    if reports.is_empty() {
        return out;
    }
    let n = reports.len() as f64;
    out.n_queries = reports[0].n_queries;
    let avg = |pick: fn(&MetricsReport) -> &BTreeMap<usize, f64>| -> BTreeMap<usize, f64> {
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for r in reports {
            for (k, v) in pick(r) {
                *acc.entry(*k).or_default() += v;
            }
        }
        acc.into_iter().map(|(k, v)| (k, v / n)).collect()
    };
    out.hit = avg(|r| &r.hit);
    out.mrr = avg(|r| &r.mrr);
    out.ndcg = avg(|r| &r.ndcg);
    out
}

/// Retrieval task direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    /// Cause text queries, effect documents, Cause encoder on the query side.
    CauseToEffect,
    /// Effect text queries, cause documents, Effect encoder on the query side.
    EffectToCause,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::CauseToEffect => "cause2effect",
            Direction::EffectToCause => "effect2cause",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "cause2effect" => Some(Direction::CauseToEffect),
            "effect2cause" => Some(Direction::EffectToCause),
            _ => None,
        }
    }

    pub fn query_text(self, p: &CausalPair) -> &str {
        match self {
            Direction::CauseToEffect => &p.cause_text,
            Direction::EffectToCause => &p.effect_text,
        }
    }

    pub fn target_text(self, p: &CausalPair) -> &str {
        match self {
            Direction::CauseToEffect => &p.effect_text,
            Direction::EffectToCause => &p.cause_text,
        }
    }

    /// Trained encoder used for queries in this direction.
    pub fn query_encoder(self, ckpt: &Checkpoint) -> &EncoderParams {
        match self {
            Direction::CauseToEffect => &ckpt.cause,
            Direction::EffectToCause => &ckpt.effect,
        }
    }
}

/// Which encoder embeds queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuerySide {
    /// The direction's trained encoder.
    Trained,
    /// The frozen semantic encoder (semantic-similarity baseline).
    SemanticOnly,
}

/// Gold documents of a pair set: the target texts, with `doc_id = pair id`.
pub fn gold_pool(pairs: &[CausalPair], direction: Direction) -> Vec<PoolEntry> {
    pairs
        .iter()
        .map(|p| PoolEntry {
            doc_id: p.id.clone(),
            text: String::from(direction.target_text(p)),
            gold_for: Some(p.id.clone()),
        })
        .collect()
}

/// One judgment per pair: query id and gold doc id are the pair id.
pub fn pair_judgments(pairs: &[CausalPair]) -> Vec<QueryJudgment> {
    pairs
        .iter()
        .map(|p| QueryJudgment::single(p.id.clone(), p.id.clone()))
        .collect()
}

/// Retrieval of each pair's target from `pool`, pool side always encoded by
/// the frozen semantic encoder.
pub fn retrieve_pairs(
    ckpt: &Checkpoint,
    pairs: &[CausalPair],
    pool: &[PoolEntry],
    direction: Direction,
    side: QuerySide,
    k: usize,
    max_len: usize,
) -> Result<Vec<RetrievalResult>> {
    let mut builder =
        IndexBuilder::new(ckpt.semantic.d(), ckpt.meta.similarity, DEFAULT_CHUNK_ROWS)?;
    for item in embed_pool(pool, &ckpt.semantic, &ckpt.vocab, max_len) {
        let (id, v) = item?;
        builder.push(id, &v)?;
    }
    let index = builder.finish();
    let encoder = match side {
        QuerySide::Trained => direction.query_encoder(ckpt),
        QuerySide::SemanticOnly => &ckpt.semantic,
    };
    let texts: Vec<&str> = pairs.iter().map(|p| direction.query_text(p)).collect();
    let queries = encode_texts(encoder, &ckpt.vocab, &texts, max_len)?;
    let ids: Vec<&str> = pairs.iter().map(|p| p.id.as_str()).collect();
    index.batch_top_k(&ids, &queries, k)
}

/// Evaluates one direction against the in-split pool plus `n_distractors`
/// sampled from `distractors`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_pairs(
    ckpt: &Checkpoint,
    pairs: &[CausalPair],
    distractors: &[String],
    n_distractors: usize,
    direction: Direction,
    side: QuerySide,
    ks: &[usize],
    seed: u64,
    max_len: usize,
) -> Result<MetricsReport> {
    let gold = gold_pool(pairs, direction);
    let pool = build_pool(&gold, distractors, gold.len() + n_distractors, seed)?;
    let k = ks.iter().copied().max().unwrap_or(1).max(1);
    let results = retrieve_pairs(ckpt, pairs, &pool, direction, side, k, max_len)?;
    evaluate_run(&results, &pair_judgments(pairs), ks)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectionMetrics {
    pub in_split: MetricsReport,
    pub augmented: MetricsReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub beta: f64,
    pub val_metric: f64,
    pub cause_to_effect: DirectionMetrics,
    pub effect_to_cause: DirectionMetrics,
}

/// Distractor sentences per direction for the augmented pools.
#[derive(Debug, Clone, Default)]
pub struct AblationPools {
    /// Effect-like sentences (documents for cause -> effect).
    pub effect_distractors: Vec<String>,
    /// Cause-like sentences (documents for effect -> cause).
    pub cause_distractors: Vec<String>,
    pub n_distractors: usize,
}

/// Trains one model per β on shared data and seed and evaluates each on the
/// test split, in-split and distractor-augmented, in both directions.
pub fn beta_ablation(
    split: &DatasetSplit,
    semantic: &EncoderParams,
    vocab: &Vocab,
    base: &TrainConfig,
    betas: &[f64],
    pools: &AblationPools,
    ks: &[usize],
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(betas.len());
    for &beta in betas {
        let mut cfg = base.clone();
        cfg.loss.beta = beta;
        let best = fit(&split.train, &split.validation, semantic, vocab, &cfg)?.best;
        let eval = |direction: Direction, distractors: &[String]| -> Result<DirectionMetrics> {
            let run = |n: usize| {
                evaluate_pairs(
                    &best,
                    &split.test,
                    distractors,
                    n,
                    direction,
                    QuerySide::Trained,
                    ks,
                    cfg.seed,
                    cfg.max_len,
                )
            };
            Ok(DirectionMetrics {
                in_split: run(0)?,
                augmented: run(pools.n_distractors)?,
            })
        };
        rows.push(AblationRow {
            beta,
            val_metric: best.meta.val_metric,
            cause_to_effect: eval(Direction::CauseToEffect, &pools.effect_distractors)?,
            effect_to_cause: eval(Direction::EffectToCause, &pools.cause_distractors)?,
        });
    }
    Ok(rows)
}
