//! Acceptance suite: runs every criterion, prints one PASS/FAIL line per
//! criterion and exits non-zero if any fails.
//!
//! Run with `cargo test --release -p causal-retrieval --test acceptance`;
//! pass criterion numbers (e.g. `-- 1 4 11`) to run a subset.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use causal_core::corpus::{
    build_pool, grouped_split, synth_causal_dataset, triplets_to_pairs, CausalPair, DatasetSplit,
    Side, SynthGenerator, TripletRecord,
};
use causal_core::encoder::{encode_grad, forward, EncoderParams, SemanticPretrainConfig};
use causal_core::eval::{
    beta_ablation, evaluate_pairs, evaluate_run, gold_pool, hit_at_k, mrr_at_k, ndcg_at_k,
    pair_judgments, retrieve_pairs, AblationPools, Direction, QueryJudgment, QuerySide,
};
use causal_core::index::{RetrievalResult, VectorIndex};
use causal_core::loss::{softmax_xent_rows, total_loss, LossConfig, SimilarityKind};
use causal_core::text::{TokenSeq, Vocab};
use causal_core::train::{fit, Checkpoint, TrainConfig};
use causal_core::Matrix;
use causal_retrieval::{checkpoint, pipeline};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

const BETAS: [f64; 5] = [0.0, 0.1, 1.0, 2.0, 5.0];
const KINDS: [SimilarityKind; 2] = [SimilarityKind::Dot, SimilarityKind::Cosine];

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.gen_range(-scale..scale))
            .collect(),
    )
    .unwrap()
}

// ---------------------------------------------------------------------------
// Independent reference implementations.

fn ref_similarity(kind: SimilarityKind, u: &[f64], v: &[f64]) -> f64 {
    let mut dot = 0.0;
    for i in 0..u.len() {
        dot += u[i] * v[i];
    }
    match kind {
        SimilarityKind::Dot => dot,
        SimilarityKind::Cosine => {
            let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if nu == 0.0 || nv == 0.0 {
                0.0
            } else {
                dot / (nu * nv)
            }
        }
    }
}

/// Mean over i of `-log(exp(s_ii) / sum_j exp(s_ij))`, by direct double loop.
fn ref_term(q: &Matrix, k: &Matrix, kind: SimilarityKind) -> f64 {
    let b = q.rows();
    let mut total = 0.0;
    for i in 0..b {
        let mut denom = 0.0;
        for j in 0..b {
            denom += ref_similarity(kind, q.row(i), k.row(j)).exp();
        }
        let numer = ref_similarity(kind, q.row(i), k.row(i)).exp();
        total += -(numer / denom).ln();
    }
    total / b as f64
}

fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// Norm-wise relative error between two gradient vectors.
fn vec_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if diff == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

// ---------------------------------------------------------------------------
// Criteria 1-3: loss.

fn c1_loss_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for n in 0..200 {
        let b = rng.gen_range(1..=8);
        let d = rng.gen_range(1..=16);
        let kind = KINDS[n % 2];
        let beta = BETAS[(n / 2) % BETAS.len()];
        let m: Vec<Matrix> = (0..4).map(|_| random_matrix(b, d, 1.5, &mut rng)).collect();
        let cfg = LossConfig {
            beta,
            similarity: kind,
        };
        let got = total_loss(&m[0], &m[1], &m[2], &m[3], &cfg).map_err(|e| e.to_string())?;
        let terms = [
            (got.terms.causal, ref_term(&m[0], &m[3], kind)),
            (got.terms.effect, ref_term(&m[1], &m[2], kind)),
            (got.terms.semantic_cause, ref_term(&m[0], &m[2], kind)),
            (got.terms.semantic_effect, ref_term(&m[1], &m[3], kind)),
        ];
        let want = terms[0].1 + terms[1].1 + beta * (terms[2].1 + terms[3].1);
        for (g, w) in terms.into_iter().chain([(got.value, want)]) {
            // B = 1 makes every term exactly zero on both sides.
            let e = if w.abs() < 1e-300 {
                g.abs()
            } else {
                rel_err(g, w)
            };
            worst = worst.max(e);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst <= 1e-10, || {
        format!("max relative error {worst:.3e} > 1e-10")
    })?;
    ensure(secs < 10.0, || format!("took {secs:.1}s (limit 10s)"))?;
    Ok(format!(
        "200 instances, max rel err {worst:.2e}, {secs:.2}s"
    ))
}

fn random_encoder(rng: &mut ChaCha8Rng, normalize: bool) -> (EncoderParams, TokenSeq) {
    let v = rng.gen_range(4..=12);
    let (de, d) = (rng.gen_range(2..=6), rng.gen_range(2..=6));
    let params = EncoderParams {
        embedding: random_matrix(v, de, 1.0, rng),
        projection: random_matrix(de, d, 1.0, rng),
        bias: (0..d).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        normalize_output: normalize,
    };
    let len = rng.gen_range(1..=6);
    let ids = (0..len).map(|_| rng.gen_range(1..v as u32)).collect();
    (
        params,
        TokenSeq {
            ids,
            original_length: len,
        },
    )
}

fn c2_gradient_checks() -> Outcome {
    let start = Instant::now();
    let h = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst: f64 = 0.0;
    let mut normalized = 0;
    for n in 0..100 {
        // Encoder parameters, through the normalization Jacobian on 3 of 4.
        let normalize = n % 4 != 3;
        normalized += normalize as usize;
        let (params, tokens) = random_encoder(&mut rng, normalize);
        let upstream: Vec<f64> = (0..params.d()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let objective = |p: &EncoderParams| -> f64 {
            let out = forward(p, &tokens).unwrap().output;
            out.iter().zip(&upstream).map(|(a, b)| a * b).sum()
        };
        let grads = encode_grad(&params, &tokens, &upstream).map_err(|e| e.to_string())?;
        for (g, (name, analytic)) in grads.groups().into_iter().enumerate() {
            let len = params.groups()[g].1.len();
            let mut fd = vec![0.0; len];
            for (i, slot) in fd.iter_mut().enumerate() {
                let mut plus = params.clone();
                plus.groups_mut()[g].1[i] += h;
                let mut minus = params.clone();
                minus.groups_mut()[g].1[i] -= h;
                *slot = (objective(&plus) - objective(&minus)) / (2.0 * h);
            }
            let e = vec_rel_err(analytic, &fd);
            if e > 1e-4 {
                return Err(format!(
                    "instance {n}: encoder {name} gradient rel err {e:.3e}"
                ));
            }
            worst = worst.max(e);
        }

        // Combined loss with respect to both trainable outputs.
        let b = rng.gen_range(2..=6);
        let d = rng.gen_range(2..=8);
        let kind = KINDS[n % 2];
        let cfg = LossConfig {
            beta: BETAS[n % BETAS.len()],
            similarity: kind,
        };
        let m: Vec<Matrix> = (0..4).map(|_| random_matrix(b, d, 1.0, &mut rng)).collect();
        let t = total_loss(&m[0], &m[1], &m[2], &m[3], &cfg).map_err(|e| e.to_string())?;
        for (which, analytic) in [(0, &t.grad_cause), (1, &t.grad_effect)] {
            let mut fd = vec![0.0; b * d];
            for (i, slot) in fd.iter_mut().enumerate() {
                let eval = |delta: f64| {
                    let mut mm = m.clone();
                    mm[which].as_mut_slice()[i] += delta;
                    total_loss(&mm[0], &mm[1], &mm[2], &mm[3], &cfg)
                        .unwrap()
                        .value
                };
                *slot = (eval(h) - eval(-h)) / (2.0 * h);
            }
            let e = vec_rel_err(analytic.as_slice(), &fd);
            if e > 1e-4 {
                return Err(format!(
                    "instance {n}: loss gradient {which} rel err {e:.3e}"
                ));
            }
            worst = worst.max(e);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1}s (limit 60s)"))?;
    Ok(format!(
        "100 instances ({normalized} through L2 normalization), max rel err {worst:.2e}, {secs:.2}s"
    ))
}

fn c3_degenerate() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    for n in 0..50 {
        let d = rng.gen_range(1..=16);
        let m: Vec<Matrix> = (0..4).map(|_| random_matrix(1, d, 3.0, &mut rng)).collect();
        let cfg = LossConfig {
            beta: BETAS[n % 5],
            similarity: KINDS[n % 2],
        };
        let t = total_loss(&m[0], &m[1], &m[2], &m[3], &cfg).map_err(|e| e.to_string())?;
        let terms = [
            t.terms.causal,
            t.terms.effect,
            t.terms.semantic_cause,
            t.terms.semantic_effect,
        ];
        ensure(terms.iter().all(|&x| x == 0.0), || {
            format!("B=1 terms not zero: {terms:?}")
        })?;
    }
    for n in 0..100 {
        let (b, d) = (rng.gen_range(1..=8), rng.gen_range(1..=16));
        let m: Vec<Matrix> = (0..4).map(|_| random_matrix(b, d, 2.0, &mut rng)).collect();
        let cfg = LossConfig {
            beta: 0.0,
            similarity: KINDS[n % 2],
        };
        let t = total_loss(&m[0], &m[1], &m[2], &m[3], &cfg).map_err(|e| e.to_string())?;
        let causal = t.terms.causal + t.terms.effect;
        ensure(t.value.to_bits() == causal.to_bits(), || {
            format!("beta=0 total {} != {}", t.value, causal)
        })?;
    }
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let b = rng.gen_range(1..=8);
        let scores = random_matrix(b, b, 5.0, &mut rng);
        let mut shifted = scores.clone();
        for i in 0..b {
            let c = rng.gen_range(-50.0..50.0);
            shifted.row_mut(i).iter_mut().for_each(|x| *x += c);
        }
        let (a, _) = softmax_xent_rows(&scores).map_err(|e| e.to_string())?;
        let (s, _) = softmax_xent_rows(&shifted).map_err(|e| e.to_string())?;
        for (x, y) in a.iter().zip(&s) {
            worst = worst.max((x - y).abs());
        }
    }
    ensure(worst <= 1e-12, || {
        format!("row shift changed a loss by {worst:.3e}")
    })?;
    Ok(format!(
        "B=1 terms exactly 0; beta=0 total bit-exact; row-shift max diff {worst:.1e}"
    ))
}

// ---------------------------------------------------------------------------
// Criteria 4-5: metrics and exact top-k.

/// Full ranking by score descending, then doc id ascending.
fn full_sort(ids: &[String], scores: &[f64]) -> Vec<String> {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| ids[a].cmp(&ids[b]))
    });
    order.into_iter().map(|i| ids[i].clone()).collect()
}

struct RefMetrics {
    hit: f64,
    mrr: f64,
    ndcg: f64,
}

fn ref_metrics(ranking: &[String], gold: &BTreeSet<String>, k: usize) -> RefMetrics {
    let mut first = None;
    let mut dcg = 0.0;
    for (pos, id) in ranking.iter().enumerate().take(k) {
        if gold.contains(id) {
            first.get_or_insert(pos + 1);
            dcg += 1.0 / ((pos + 2) as f64).log2();
        }
    }
    let idcg: f64 = (1..=gold.len())
        .map(|i| 1.0 / ((i + 1) as f64).log2())
        .sum();
    RefMetrics {
        hit: if first.is_some() { 1.0 } else { 0.0 },
        mrr: first.map_or(0.0, |r| 1.0 / r as f64),
        ndcg: if idcg == 0.0 { 0.0 } else { dcg / idcg },
    }
}

fn c4_metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let ks = [1, 2, 3, 5, 10, 20];
    let mut results = Vec::new();
    let mut judgments = Vec::new();
    let mut oracle_sum: BTreeMap<usize, [f64; 3]> = BTreeMap::new();
    for n in 0..500 {
        let size = rng.gen_range(1..=60);
        let ids: Vec<String> = (0..size)
            .map(|i| format!("doc{:03}", rng.gen_range(0..1000) * 60 + i))
            .collect();
        // Coarse scores so ties (broken by id) occur.
        let vecs: Vec<Vec<f64>> = (0..size)
            .map(|_| vec![rng.gen_range(0..8) as f64 / 4.0])
            .collect();
        let index = VectorIndex::build(
            ids.iter().cloned().zip(vecs.iter().cloned()),
            1,
            SimilarityKind::Dot,
            16,
        )
        .map_err(|e| e.to_string())?;
        let scores: Vec<f64> = vecs.iter().map(|v| v[0]).collect();
        let ranking = full_sort(&ids, &scores);
        let n_gold = rng.gen_range(1..=3);
        let mut gold: BTreeSet<String> = (0..n_gold)
            .map(|_| ids[rng.gen_range(0..size)].clone())
            .collect();
        if rng.gen_bool(0.2) {
            gold.insert("missing-doc".into());
        }
        let judgment = QueryJudgment {
            query_id: format!("q{n}"),
            gold_doc_ids: gold.clone(),
            answer_text: None,
        };
        let result = RetrievalResult {
            query_id: judgment.query_id.clone(),
            hits: index.top_k(&[1.0], 20).map_err(|e| e.to_string())?,
        };
        let mut prev = (0.0, 0.0);
        for &k in &ks {
            let want = ref_metrics(&ranking, &gold, k);
            let got = (
                hit_at_k(&result, &judgment, k),
                mrr_at_k(&result, &judgment, k),
                ndcg_at_k(&result, &judgment, k),
            );
            ensure(got == (want.hit, want.mrr, want.ndcg), || {
                format!(
                    "instance {n} k={k}: got {got:?}, oracle ({}, {}, {})",
                    want.hit, want.mrr, want.ndcg
                )
            })?;
            ensure(got.1 <= got.0, || format!("instance {n} k={k}: mrr > hit"))?;
            ensure(got.0 >= prev.0 && got.2 >= prev.1, || {
                format!("instance {n} k={k}: hit or ndcg decreased in k")
            })?;
            prev = (got.0, got.2);
            let acc = oracle_sum.entry(k).or_default();
            acc[0] += want.hit;
            acc[1] += want.mrr;
            acc[2] += want.ndcg;
        }
        results.push(result);
        judgments.push(judgment);
    }
    // Aggregates, with query order reversed.
    results.reverse();
    let report = evaluate_run(&results, &judgments, &ks).map_err(|e| e.to_string())?;
    for (k, [h, m, g]) in &oracle_sum {
        let want = (h / 500.0, m / 500.0, g / 500.0);
        let got = (report.hit_at(*k), report.mrr_at(*k), report.ndcg_at(*k));
        ensure(got == want, || {
            format!("mean at k={k}: got {got:?}, oracle {want:?}")
        })?;
    }
    Ok(format!(
        "500 rankings x {} cutoffs exact; monotone in k; mrr <= hit; Hit@1 mean {:.3}",
        ks.len(),
        report.hit_at(1)
    ))
}

fn c5_topk_exact() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut checked = 0;
    for n in 0..24 {
        let size = if n == 0 {
            10_000
        } else {
            rng.gen_range(1..=10_000)
        };
        let d = rng.gen_range(1..=16);
        let kind = KINDS[n % 2];
        // Quantized entries on half the instances produce many exact ties.
        let quantized = n % 4 < 2;
        let value = |rng: &mut ChaCha8Rng| {
            if quantized {
                rng.gen_range(-2..=2) as f64 / 2.0
            } else {
                rng.gen_range(-1.0..1.0)
            }
        };
        let docs: Vec<Vec<f64>> = (0..size)
            .map(|_| (0..d).map(|_| value(&mut rng)).collect())
            .collect();
        let mut ids: Vec<String> = (0..size).map(|i| format!("d{i:05}")).collect();
        ids.shuffle(&mut rng);
        let indexes: Vec<VectorIndex> = [64, 1024, 65_536]
            .iter()
            .map(|&c| {
                VectorIndex::build(ids.iter().cloned().zip(docs.iter().cloned()), d, kind, c)
                    .unwrap()
            })
            .collect();
        for _ in 0..3 {
            let q: Vec<f64> = (0..d).map(|_| value(&mut rng)).collect();
            let k = if rng.gen_bool(0.1) {
                size + 5
            } else {
                rng.gen_range(1..=50)
            };
            // Reference scores over the stored (f32) vectors.
            let scores: Vec<f64> = docs
                .iter()
                .map(|v| {
                    let stored: Vec<f64> = v.iter().map(|&x| x as f32 as f64).collect();
                    ref_similarity(kind, &q, &stored)
                })
                .collect();
            let want: Vec<String> = full_sort(&ids, &scores).into_iter().take(k).collect();
            let first = indexes[0].top_k(&q, k).map_err(|e| e.to_string())?;
            let got: Vec<String> = first.iter().map(|h| h.doc_id.clone()).collect();
            ensure(got == want, || {
                format!("instance {n} (N={size}, d={d}, k={k}, {kind:?}): ranking differs")
            })?;
            for other in &indexes[1..] {
                let hits = other.top_k(&q, k).map_err(|e| e.to_string())?;
                ensure(hits == first, || {
                    format!("instance {n}: chunk size changed the result")
                })?;
            }
            checked += 1;
        }
    }
    Ok(format!(
        "{checked} queries over pools up to N=10^4 equal the full sort; identical for chunk sizes 64/1024/65536"
    ))
}

// ---------------------------------------------------------------------------
// Criterion 6: split integrity.

fn c6_split_integrity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    for n in 0..100 {
        let groups = rng.gen_range(8..=200);
        let size = rng.gen_range(1..=4);
        let pairs: Vec<CausalPair> = (0..groups)
            .flat_map(|g| {
                (0..size).map(move |i| {
                    CausalPair::new(format!("p{g}-{i}"), "a cause", "an effect")
                        .with_group(format!("g{g}"))
                })
            })
            .collect();
        let seed = rng.gen();
        let split = grouped_split(&pairs, [6.0, 1.0, 1.0], seed).map_err(|e| e.to_string())?;
        let mut owner: BTreeMap<&str, usize> = BTreeMap::new();
        let mut seen = BTreeSet::new();
        for (s, part) in split.parts().iter().enumerate() {
            for p in *part {
                ensure(seen.insert(p.id.as_str()), || {
                    format!("corpus {n}: pair {} placed twice", p.id)
                })?;
                let prev = *owner.entry(p.group_id.as_str()).or_insert(s);
                ensure(prev == s, || {
                    format!("corpus {n}: group {} in two splits", p.group_id)
                })?;
            }
        }
        ensure(seen.len() == pairs.len(), || {
            format!("corpus {n}: pairs lost")
        })?;
        let total = pairs.len() as f64;
        for (s, part) in split.parts().iter().enumerate() {
            let target = total * [6.0, 1.0, 1.0][s] / 8.0;
            let off = (part.len() as f64 - target).abs();
            ensure(off <= size as f64, || {
                format!(
                    "corpus {n} ({groups} groups of {size}): split {s} has {} pairs, target {target:.1}",
                    part.len()
                )
            })?;
        }
    }
    let triplets: Vec<TripletRecord> = (0..500)
        .map(|i| TripletRecord {
            id: format!("t{i}"),
            cause: format!("cause {i}"),
            premise: format!("premise {i}"),
            effect: format!("effect {i}"),
        })
        .collect();
    let pairs = triplets_to_pairs(&triplets).map_err(|e| e.to_string())?;
    ensure(pairs.len() == 1000, || {
        format!("500 triplets gave {} pairs", pairs.len())
    })?;
    let split = grouped_split(&pairs, [6.0, 1.0, 1.0], 1).map_err(|e| e.to_string())?;
    let mut owner: BTreeMap<&str, usize> = BTreeMap::new();
    for (s, part) in split.parts().iter().enumerate() {
        for p in *part {
            ensure(*owner.entry(p.group_id.as_str()).or_insert(s) == s, || {
                format!("triplet group {} straddles splits", p.group_id)
            })?;
        }
    }
    Ok("100 corpora: no group straddles splits, 6:1:1 within one group; 500 triplets -> 1000 pairs".into())
}

// ---------------------------------------------------------------------------
// Criteria 7-9: synthetic end-to-end.

struct Synthetic {
    split: DatasetSplit,
    vocab: Vocab,
    semantic: EncoderParams,
    /// Held-out effect templates (documents for cause -> effect).
    effect_distractors: Vec<String>,
    /// Held-out cause templates (documents for effect -> cause).
    cause_distractors: Vec<String>,
    cfg: TrainConfig,
    model: Checkpoint,
    setup_time: Duration,
}

const SEED: u64 = 7;
const N_DISTRACTORS: usize = 10_000;

impl Synthetic {
    fn build() -> Result<Self, String> {
        let start = Instant::now();
        let err = |e: causal_core::Error| e.to_string();
        let pairs = synth_causal_dataset(2000, (64, 64), SEED).map_err(err)?;
        let generator = SynthGenerator::new(64, 64, SEED).map_err(err)?;
        let effect_distractors = generator
            .distractors(Side::Effect, 55_000, &pairs, 0)
            .map_err(err)?;
        let cause_distractors = generator
            .distractors(Side::Cause, 55_000, &pairs, 1)
            .map_err(err)?;
        let split = grouped_split(&pairs, [6.0, 1.0, 1.0], SEED).map_err(err)?;
        let (vocab, semantic) = pipeline::semantic_from_train(
            &split.train,
            1,
            &SemanticPretrainConfig::default(),
            SEED,
        )
        .map_err(err)?;
        let cfg = TrainConfig {
            seed: SEED,
            ..TrainConfig::default()
        };
        let model = fit(&split.train, &split.validation, &semantic, &vocab, &cfg)
            .map_err(err)?
            .best;
        Ok(Self {
            split,
            vocab,
            semantic,
            effect_distractors,
            cause_distractors,
            cfg,
            model,
            setup_time: start.elapsed(),
        })
    }

    fn distractors(&self, direction: Direction) -> &[String] {
        match direction {
            Direction::CauseToEffect => &self.effect_distractors[..N_DISTRACTORS],
            Direction::EffectToCause => &self.cause_distractors[..N_DISTRACTORS],
        }
    }
}

fn c7_pool_growth(s: &Synthetic) -> Outcome {
    let test = &s.split.test;
    let direction = Direction::CauseToEffect;
    let gold = gold_pool(test, direction);
    let source: Vec<&str> = s
        .effect_distractors
        .iter()
        .chain(&s.cause_distractors)
        .map(String::as_str)
        .collect();
    let judgments = pair_judgments(test);
    let mut rows = Vec::new();
    let mut prev_ranks: Option<BTreeMap<String, usize>> = None;
    let mut prev_metrics = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut prev_pool: Option<BTreeSet<String>> = None;
    for n in [0, 10_000, 100_000] {
        let pool = build_pool(&gold, &source, gold.len() + n, SEED).map_err(|e| e.to_string())?;
        let ids: BTreeSet<String> = pool.iter().map(|e| e.doc_id.clone()).collect();
        if let Some(p) = &prev_pool {
            ensure(p.is_subset(&ids), || {
                format!("pool at {n} does not contain the smaller pool")
            })?;
        }
        let k = pool.len();
        let results = retrieve_pairs(
            &s.model,
            test,
            &pool,
            direction,
            QuerySide::Trained,
            k,
            s.cfg.max_len,
        )
        .map_err(|e| e.to_string())?;
        let ranks: BTreeMap<String, usize> = results
            .iter()
            .map(|r| {
                let rank = r
                    .hits
                    .iter()
                    .position(|h| h.doc_id == r.query_id)
                    .expect("gold in full ranking")
                    + 1;
                (r.query_id.clone(), rank)
            })
            .collect();
        if let Some(prev) = &prev_ranks {
            for (q, r) in &ranks {
                ensure(*r >= prev[q], || {
                    format!(
                        "query {q}: gold rank improved from {} to {r} at {n}",
                        prev[q]
                    )
                })?;
            }
        }
        let report = evaluate_run(&results, &judgments, &[1, 10]).map_err(|e| e.to_string())?;
        let m = (report.hit_at(1), report.hit_at(10), report.mrr_at(10));
        ensure(
            m.0 <= prev_metrics.0 && m.1 <= prev_metrics.1 && m.2 <= prev_metrics.2,
            || format!("metrics rose at {n} distractors: {m:?} after {prev_metrics:?}"),
        )?;
        rows.push(format!(
            "{n}: H@1 {:.3} H@10 {:.3} M@10 {:.3}",
            m.0, m.1, m.2
        ));
        prev_metrics = m;
        prev_ranks = Some(ranks);
        prev_pool = Some(ids);
    }
    Ok(format!("non-increasing; {}", rows.join(" | ")))
}

fn c8_synthetic_win(s: &Synthetic) -> Outcome {
    let start = Instant::now();
    let direction = Direction::CauseToEffect;
    let run = |side| {
        evaluate_pairs(
            &s.model,
            &s.split.test,
            s.distractors(direction),
            N_DISTRACTORS,
            direction,
            side,
            &[1, 10],
            SEED,
            s.cfg.max_len,
        )
        .map(|r| r.hit_at(1))
        .map_err(|e| e.to_string())
    };
    let trained = run(QuerySide::Trained)?;
    let baseline = run(QuerySide::SemanticOnly)?;
    let secs = (s.setup_time + start.elapsed()).as_secs_f64();
    let detail = format!(
        "cause->effect Hit@1 {trained:.3} vs semantic-only {baseline:.3} (+{:.1} pts), pool {}+{N_DISTRACTORS}, {secs:.1}s",
        100.0 * (trained - baseline),
        s.split.test.len()
    );
    ensure(trained >= 0.50, || format!("{detail}: Hit@1 below 0.50"))?;
    ensure(trained - baseline >= 0.20, || {
        format!("{detail}: margin below 20 points")
    })?;
    ensure(secs < 600.0, || format!("{detail}: over 10 minutes"))?;
    Ok(detail)
}

fn c9_beta_direction(s: &Synthetic) -> Outcome {
    let pools = AblationPools {
        effect_distractors: s.distractors(Direction::CauseToEffect).to_vec(),
        cause_distractors: s.distractors(Direction::EffectToCause).to_vec(),
        n_distractors: N_DISTRACTORS,
    };
    let rows = beta_ablation(
        &s.split,
        &s.semantic,
        &s.vocab,
        &s.cfg,
        &[0.0, 1.0],
        &pools,
        &[1, 10],
    )
    .map_err(|e| e.to_string())?;
    let (b0, b1) = (&rows[0], &rows[1]);
    let c2e = (
        b0.cause_to_effect.augmented.hit_at(1),
        b1.cause_to_effect.augmented.hit_at(1),
    );
    let e2c = (
        b0.effect_to_cause.augmented.hit_at(1),
        b1.effect_to_cause.augmented.hit_at(1),
    );
    let detail = format!(
        "Hit@1 beta=0 vs beta=1: cause->effect {:.3} vs {:.3}, effect->cause {:.3} vs {:.3}",
        c2e.0, c2e.1, e2c.0, e2c.1
    );
    ensure(c2e.1 >= c2e.0 && e2c.1 >= e2c.0, || {
        format!("{detail}: beta=1 below beta=0")
    })?;
    Ok(detail)
}

// ---------------------------------------------------------------------------
// Criteria 10-11: artifacts.

fn cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_causal-retrieval"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!(
            "`{}` failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn pipeline_run(dir: &Path) -> Result<(), String> {
    let steps: &[&[&str]] = &[
        &[
            "synth",
            "--n-pairs",
            "800",
            "--seed",
            "7",
            "--out",
            "pairs.jsonl",
            "--distractors",
            "2000",
            "--effect-distractors-out",
            "effects.txt",
        ],
        &[
            "prepare",
            "--pairs",
            "pairs.jsonl",
            "--ratios",
            "6:1:1",
            "--seed",
            "7",
            "--out-dir",
            "data",
            "--distractors",
            "effects.txt",
            "--n-distractors",
            "2000",
        ],
        &[
            "train",
            "--train",
            "data/train.jsonl",
            "--val",
            "data/val.jsonl",
            "--out",
            "model.bin",
            "--seed",
            "7",
            "--epochs",
            "8",
            "--semantic-epochs",
            "3",
        ],
        &[
            "embed",
            "--checkpoint",
            "model.bin",
            "--pool",
            "data/pool.jsonl",
            "--out",
            "pool.emb",
        ],
        &[
            "index",
            "--embeddings",
            "pool.emb",
            "--chunk-rows",
            "1024",
            "--out",
            "index.json",
        ],
        &[
            "retrieve",
            "--direction",
            "cause2effect",
            "--pool-embeddings",
            "pool.emb",
            "--checkpoint",
            "model.bin",
            "--queries",
            "data/test.jsonl",
            "--k",
            "20",
            "--out",
            "results.jsonl",
        ],
        &[
            "eval",
            "--results",
            "results.jsonl",
            "--pool",
            "data/pool.jsonl",
            "--checkpoints",
            "model.bin",
            "--seeds",
            "7",
            "--out",
            "metrics.json",
        ],
    ];
    for step in steps {
        cli(dir, step)?;
    }
    Ok(())
}

fn c10_reproducibility() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    pipeline_run(a.path())?;
    pipeline_run(b.path())?;
    let artifacts = [
        "model.bin",
        "pool.emb",
        "results.jsonl",
        "metrics.json",
        "data/train.jsonl",
        "data/pool.jsonl",
        "model.bin.manifest.json",
        "metrics.json.manifest.json",
    ];
    for name in artifacts {
        let x = std::fs::read(a.path().join(name)).map_err(|e| format!("{name}: {e}"))?;
        let y = std::fs::read(b.path().join(name)).map_err(|e| format!("{name}: {e}"))?;
        ensure(x == y, || format!("{name} differs between runs"))?;
    }
    Ok(format!(
        "{} artifacts byte-identical across two full CLI runs",
        artifacts.len()
    ))
}

fn c11_checkpoint_roundtrip(model: &Checkpoint) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("model.bin");
    checkpoint::save(model, &path).map_err(|e| e.to_string())?;
    let first = std::fs::read(&path).map_err(|e| e.to_string())?;
    let loaded = checkpoint::load(&path).map_err(|e| e.to_string())?;
    let again = dir.path().join("again.bin");
    checkpoint::save(&loaded, &again).map_err(|e| e.to_string())?;
    ensure(
        std::fs::read(&again).map_err(|e| e.to_string())? == first,
        || "save -> load -> save differs".into(),
    )?;

    let kind_of = |bytes: &[u8]| -> String {
        match checkpoint::from_bytes(bytes, Path::new("corrupt.bin")) {
            Ok(_) => "ok".into(),
            Err(e) => e.kind().into(),
        }
    };
    let mut bad_magic = first.clone();
    bad_magic[0] ^= 0xff;
    let truncated = &first[..first.len() - 17];
    // Same payload, header claiming a wider embedding.
    let header_len = u32::from_le_bytes(first[8..12].try_into().unwrap()) as usize;
    let mut header: checkpoint::CheckpointHeader =
        serde_json::from_slice(&first[12..12 + header_len]).map_err(|e| e.to_string())?;
    header.d_emb += 1;
    let new_header = serde_json::to_vec(&header).map_err(|e| e.to_string())?;
    let mut bad_dims = first[..8].to_vec();
    bad_dims.extend_from_slice(&(new_header.len() as u32).to_le_bytes());
    bad_dims.extend_from_slice(&new_header);
    bad_dims.extend_from_slice(&first[12 + header_len..]);

    let kinds = [kind_of(&bad_magic), kind_of(truncated), kind_of(&bad_dims)];
    let expected = ["bad-magic", "truncated", "integrity"];
    ensure(kinds == expected, || {
        format!("error kinds {kinds:?}, expected {expected:?}")
    })?;
    Ok(format!(
        "{} bytes round-trip exactly; magic/truncation/dims -> {}",
        first.len(),
        kinds.join("/")
    ))
}

// ---------------------------------------------------------------------------

fn main() {
    let selected: BTreeSet<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let wanted = |n: u32| selected.is_empty() || selected.contains(&n);
    let needs_synthetic = [7, 8, 9, 11].iter().any(|&n| wanted(n));

    let mut synthetic: Option<Result<Synthetic, String>> = None;
    let mut failures = 0;
    let mut report = |n: u32, name: &str, run: &mut dyn FnMut() -> Outcome| {
        if !wanted(n) {
            return;
        }
        let start = Instant::now();
        let outcome = match catch_unwind(AssertUnwindSafe(run)) {
            Ok(o) => o,
            Err(p) => Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failures += 1;
                println!("criterion {n:>2} FAIL  {name}: {detail} [{secs:.1}s]");
            }
        }
    };

    report(1, "loss oracle", &mut c1_loss_oracle);
    report(2, "gradient checks", &mut c2_gradient_checks);
    report(3, "degenerate exactness", &mut c3_degenerate);
    report(4, "metric oracle", &mut c4_metric_oracle);
    report(5, "top-k exactness", &mut c5_topk_exact);
    report(6, "split integrity", &mut c6_split_integrity);
    if needs_synthetic {
        synthetic = Some(Synthetic::build());
    }
    let with_synth = |f: fn(&Synthetic) -> Outcome| {
        let s = synthetic.as_ref();
        move || match s {
            Some(Ok(s)) => f(s),
            Some(Err(e)) => Err(format!("synthetic setup failed: {e}")),
            None => Err("synthetic setup skipped".into()),
        }
    };
    report(
        7,
        "pool-growth monotonicity",
        &mut with_synth(c7_pool_growth),
    );
    report(
        8,
        "synthetic causal-retrieval win",
        &mut with_synth(c8_synthetic_win),
    );
    report(
        9,
        "beta-ablation direction",
        &mut with_synth(c9_beta_direction),
    );
    report(10, "pipeline reproducibility", &mut c10_reproducibility);
    report(
        11,
        "checkpoint round-trip",
        &mut with_synth(|s| c11_checkpoint_roundtrip(&s.model)),
    );

    if failures > 0 {
        println!("acceptance: {failures} criterion(s) failed");
        std::process::exit(1);
    }
    println!("acceptance: all selected criteria passed");
}
