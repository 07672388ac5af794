//! JSON forms of metric reports and ablation tables.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use causal_core::eval::{AblationRow, DirectionMetrics, MetricsReport};
use serde::{Deserialize, Serialize};

use crate::error::{FormatError, FormatResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub n_queries: usize,
    pub hit: BTreeMap<usize, f64>,
    pub mrr: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
    pub fingerprint: String,
}

impl SeedMetrics {
    pub fn new(seed: u64, r: &MetricsReport) -> Self {
        Self {
            seed,
            n_queries: r.n_queries,
            hit: r.hit.clone(),
            mrr: r.mrr.clone(),
            ndcg: r.ndcg.clone(),
            fingerprint: r.fingerprint.clone(),
        }
    }
}

/// Metrics JSON: the (mean) report, plus one entry per seed when several runs
/// were averaged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsJson {
    pub n_queries: usize,
    pub hit: BTreeMap<usize, f64>,
    pub mrr: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
    pub seeds: Vec<SeedMetrics>,
    pub fingerprint: String,
}

impl MetricsJson {
    pub fn new(mean: &MetricsReport, seeds: Vec<SeedMetrics>) -> Self {
        Self {
            n_queries: mean.n_queries,
            hit: mean.hit.clone(),
            mrr: mean.mrr.clone(),
            ndcg: mean.ndcg.clone(),
            seeds,
            fingerprint: mean.fingerprint.clone(),
        }
    }

    pub fn report(&self) -> MetricsReport {
        MetricsReport {
            n_queries: self.n_queries,
            hit: self.hit.clone(),
            mrr: self.mrr.clone(),
            ndcg: self.ndcg.clone(),
            fingerprint: self.fingerprint.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportJson {
    pub n_queries: usize,
    pub hit: BTreeMap<usize, f64>,
    pub mrr: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
}

impl From<&MetricsReport> for ReportJson {
    fn from(r: &MetricsReport) -> Self {
        Self {
            n_queries: r.n_queries,
            hit: r.hit.clone(),
            mrr: r.mrr.clone(),
            ndcg: r.ndcg.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionJson {
    pub in_split: ReportJson,
    pub augmented: ReportJson,
}

impl From<&DirectionMetrics> for DirectionJson {
    fn from(d: &DirectionMetrics) -> Self {
        Self {
            in_split: (&d.in_split).into(),
            augmented: (&d.augmented).into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRowJson {
    pub beta: f64,
    pub val_metric: f64,
    pub cause2effect: DirectionJson,
    pub effect2cause: DirectionJson,
}

/// One row per beta; each direction is scored on the in-split pool and on
/// the distractor-augmented pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub ks: Vec<usize>,
    pub n_distractors: usize,
    pub seed: u64,
    pub rows: Vec<AblationRowJson>,
}

impl AblationTable {
    pub fn new(rows: &[AblationRow], ks: &[usize], n_distractors: usize, seed: u64) -> Self {
        Self {
            ks: ks.to_vec(),
            n_distractors,
            seed,
            rows: rows
                .iter()
                .map(|r| AblationRowJson {
                    beta: r.beta,
                    val_metric: r.val_metric,
                    cause2effect: (&r.cause_to_effect).into(),
                    effect2cause: (&r.effect_to_cause).into(),
                })
                .collect(),
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> FormatResult<()> {
    let mut w = crate::formats::create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| FormatError::io(path, e.into()))?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|e| FormatError::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> FormatResult<T> {
    let bytes = std::fs::read(path).map_err(|e| FormatError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| FormatError::Header {
        path: path.into(),
        message: e.to_string(),
    })
}
