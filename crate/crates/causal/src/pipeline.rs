//! Pipeline steps shared by the command-line tool and tests.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use causal_core::corpus::{CausalPair, PoolEntry};
use causal_core::encoder::{encode, pretrain_semantic, EncoderParams, SemanticPretrainConfig};
use causal_core::eval::{Direction, QueryJudgment, QuerySide};
use causal_core::index::embed_pool;
use causal_core::text::{build_vocab, encode_tokens, Vocab};
use causal_core::train::Checkpoint;

use crate::embfile::{EmbeddingHeader, EmbeddingWriter};
use crate::error::{FormatError, FormatResult};

/// Every cause and effect text of a pair set, in pair order.
pub fn pair_texts(pairs: &[CausalPair]) -> Vec<&str> {
    pairs
        .iter()
        .flat_map(|p| [p.cause_text.as_str(), p.effect_text.as_str()])
        .collect()
}

/// Vocabulary and frozen semantic encoder, both built from the training texts.
pub fn semantic_from_train(
    train: &[CausalPair],
    min_freq: usize,
    cfg: &SemanticPretrainConfig,
    seed: u64,
) -> causal_core::Result<(Vocab, EncoderParams)> {
    let texts = pair_texts(train);
    let vocab = build_vocab(&texts, min_freq);
    let semantic = pretrain_semantic(&texts, &vocab, cfg, seed)?;
    Ok((vocab, semantic))
}

pub fn query_encoder(ckpt: &Checkpoint, direction: Direction, side: QuerySide) -> &EncoderParams {
    match side {
        QuerySide::Trained => direction.query_encoder(ckpt),
        QuerySide::SemanticOnly => &ckpt.semantic,
    }
}

fn header(ckpt: &Checkpoint, n: usize) -> EmbeddingHeader {
    EmbeddingHeader {
        n,
        d: ckpt.semantic.d(),
        similarity: ckpt.meta.similarity.as_str().to_owned(),
    }
}

/// Streams pool embeddings (frozen semantic encoder) into an embedding file.
pub fn write_pool_embeddings(
    path: &Path,
    pool: &[PoolEntry],
    ckpt: &Checkpoint,
    max_len: usize,
) -> anyhow::Result<()> {
    let mut w = EmbeddingWriter::create(path, header(ckpt, pool.len()))?;
    for item in embed_pool(pool, &ckpt.semantic, &ckpt.vocab, max_len) {
        let (id, v) = item?;
        w.push(&id, &v)?;
    }
    w.finish()?;
    Ok(())
}

/// Writes query embeddings for `direction`, keyed by pair id.
pub fn write_query_embeddings(
    path: &Path,
    pairs: &[CausalPair],
    ckpt: &Checkpoint,
    direction: Direction,
    side: QuerySide,
    max_len: usize,
) -> anyhow::Result<()> {
    let encoder = query_encoder(ckpt, direction, side);
    let mut w = EmbeddingWriter::create(path, header(ckpt, pairs.len()))?;
    for p in pairs {
        let v = encode(
            encoder,
            &encode_tokens(&ckpt.vocab, direction.query_text(p), max_len),
        )?;
        w.push(&p.id, &v)?;
    }
    w.finish()?;
    Ok(())
}

/// Judgments from a pool's `gold_for` annotations: each annotated query's
/// gold set is every document marked for it.
pub fn judgments_from_pool(pool: &[PoolEntry]) -> Vec<QueryJudgment> {
    let mut gold: BTreeMap<&str, BTreeSet<String>> = BTreeMap::new();
    for e in pool {
        if let Some(q) = &e.gold_for {
            gold.entry(q.as_str()).or_default().insert(e.doc_id.clone());
        }
    }
    gold.into_iter()
        .map(|(q, ids)| QueryJudgment {
            query_id: q.to_owned(),
            gold_doc_ids: ids,
            answer_text: None,
        })
        .collect()
}

/// TSV dump `id \t role \t v1 .. vd` with one row per pair and role
/// (cause, effect, semantic_cause, semantic_effect).
pub fn export_tsv(
    path: &Path,
    pairs: &[CausalPair],
    ckpt: &Checkpoint,
    max_len: usize,
) -> anyhow::Result<()> {
    let io = |e: std::io::Error| FormatError::io(path, e);
    let mut w = crate::formats::create(path)?;
    write!(w, "id\trole").map_err(io)?;
    for i in 1..=ckpt.semantic.d() {
        write!(w, "\tv{i}").map_err(io)?;
    }
    writeln!(w).map_err(io)?;
    for p in pairs {
        let rows: [(&str, &EncoderParams, &str); 4] = [
            ("cause", &ckpt.cause, &p.cause_text),
            ("effect", &ckpt.effect, &p.effect_text),
            ("semantic_cause", &ckpt.semantic, &p.cause_text),
            ("semantic_effect", &ckpt.semantic, &p.effect_text),
        ];
        for (role, params, text) in rows {
            let v = encode(params, &encode_tokens(&ckpt.vocab, text, max_len))?;
            write!(w, "{}\t{role}", p.id).map_err(io)?;
            for x in v {
                write!(w, "\t{}", x as f32).map_err(io)?;
            }
            writeln!(w).map_err(io)?;
        }
    }
    w.flush().map_err(io)?;
    Ok(())
}

/// Parses `a:b:c` split ratios.
pub fn parse_ratios(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(format!("expected three ratios like 6:1:1, got `{s}`"));
    }
    let mut out = [0.0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p
            .trim()
            .parse::<f64>()
            .ok()
            .filter(|x| x.is_finite() && *x >= 0.0)
            .ok_or_else(|| format!("bad ratio `{p}`"))?;
    }
    if out.iter().sum::<f64>() <= 0.0 {
        return Err("ratios must not all be zero".into());
    }
    Ok(out)
}

/// Reads a checkpoint header and returns its canonical JSON for fingerprints.
pub fn checkpoint_identity(path: &Path) -> FormatResult<String> {
    let h = crate::checkpoint::read_header(path)?;
    serde_json::to_string(&h).map_err(|e| FormatError::io(path, e.into()))
}
