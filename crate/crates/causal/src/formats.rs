//! JSONL and plain-text interchange formats.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use causal_core::corpus::{validate_triplet, CausalPair, PoolEntry, TripletRecord};
use causal_core::index::{Hit, RetrievalResult};
use causal_core::text::{normalize, Vocab, PAD_ID, UNK_ID};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{FormatError, FormatResult};

#[derive(Debug, Serialize, Deserialize)]
struct PairRecord {
    id: String,
    cause: String,
    effect: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    group: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TripletLine {
    id: String,
    cause: String,
    premise: String,
    effect: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct PoolLine {
    doc_id: String,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gold_for: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct HitLine {
    doc_id: String,
    score: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ResultLine {
    query_id: String,
    hits: Vec<HitLine>,
}

#[derive(Debug, Serialize, Deserialize)]
struct VocabHeader {
    pad: u32,
    unk: u32,
    size: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct VocabLine {
    token: String,
    id: u32,
}

pub(crate) fn open(path: &Path) -> FormatResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| FormatError::io(path, e))
}

pub(crate) fn create(path: &Path) -> FormatResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| FormatError::io(path, e))
}

/// Parses every non-blank line of a JSONL stream, tagging records with their
/// 1-based line number.
fn parse_jsonl<T: DeserializeOwned, R: BufRead>(
    reader: R,
    path: &Path,
) -> FormatResult<Vec<(usize, T)>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| FormatError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| FormatError::record(path, i + 1, e))?;
        out.push((i + 1, value));
    }
    Ok(out)
}

fn write_jsonl<T: Serialize, W: Write>(
    mut w: W,
    items: impl IntoIterator<Item = T>,
    path: &Path,
) -> FormatResult<()> {
    let io = |e: std::io::Error| FormatError::io(path, e);
    for item in items {
        serde_json::to_writer(&mut w, &item).map_err(|e| FormatError::io(path, e.into()))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

fn check_nonempty(path: &Path, line: usize, id: &str, field: &str, text: &str) -> FormatResult<()> {
    if normalize(text).is_empty() {
        return Err(FormatError::record(
            path,
            line,
            format!("record `{id}` has an empty {field}"),
        ));
    }
    Ok(())
}

fn check_unique(
    seen: &mut BTreeSet<String>,
    path: &Path,
    line: usize,
    id: &str,
) -> FormatResult<()> {
    if !seen.insert(id.to_owned()) {
        return Err(FormatError::record(
            path,
            line,
            format!("duplicate id `{id}`"),
        ));
    }
    Ok(())
}

/// Reads pair JSONL: `{"id", "cause", "effect", "group"?}`.
pub fn load_pairs(path: &Path) -> FormatResult<Vec<CausalPair>> {
    let mut seen = BTreeSet::new();
    let mut pairs = Vec::new();
    for (line, r) in parse_jsonl::<PairRecord, _>(open(path)?, path)? {
        check_unique(&mut seen, path, line, &r.id)?;
        check_nonempty(path, line, &r.id, "cause", &r.cause)?;
        check_nonempty(path, line, &r.id, "effect", &r.effect)?;
        let group = r.group.unwrap_or_else(|| r.id.clone());
        pairs.push(CausalPair::new(r.id, r.cause, r.effect).with_group(group));
    }
    Ok(pairs)
}

pub fn write_pairs(path: &Path, pairs: &[CausalPair]) -> FormatResult<()> {
    let records = pairs.iter().map(|p| PairRecord {
        id: p.id.clone(),
        cause: p.cause_text.clone(),
        effect: p.effect_text.clone(),
        group: Some(p.group_id.clone()),
    });
    write_jsonl(create(path)?, records, path)
}

/// Reads triplet JSONL: `{"id", "cause", "premise", "effect"}`.
pub fn load_triplets(path: &Path) -> FormatResult<Vec<TripletRecord>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (line, r) in parse_jsonl::<TripletLine, _>(open(path)?, path)? {
        check_unique(&mut seen, path, line, &r.id)?;
        let t = TripletRecord {
            id: r.id,
            cause: r.cause,
            premise: r.premise,
            effect: r.effect,
        };
        validate_triplet(&t).map_err(|e| FormatError::record(path, line, e))?;
        out.push(t);
    }
    Ok(out)
}

pub fn write_triplets(path: &Path, triplets: &[TripletRecord]) -> FormatResult<()> {
    let records = triplets.iter().map(|t| TripletLine {
        id: t.id.clone(),
        cause: t.cause.clone(),
        premise: t.premise.clone(),
        effect: t.effect.clone(),
    });
    write_jsonl(create(path)?, records, path)
}

/// Reads pool JSONL: `{"doc_id", "text", "gold_for"?}`.
pub fn load_pool(path: &Path) -> FormatResult<Vec<PoolEntry>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (line, r) in parse_jsonl::<PoolLine, _>(open(path)?, path)? {
        check_unique(&mut seen, path, line, &r.doc_id)?;
        out.push(PoolEntry {
            doc_id: r.doc_id,
            text: r.text,
            gold_for: r.gold_for,
        });
    }
    Ok(out)
}

pub fn write_pool(path: &Path, pool: &[PoolEntry]) -> FormatResult<()> {
    let records = pool.iter().map(|e| PoolLine {
        doc_id: e.doc_id.clone(),
        text: e.text.clone(),
        gold_for: e.gold_for.clone(),
    });
    write_jsonl(create(path)?, records, path)
}

/// Reads one sentence per line, skipping blank lines.
pub fn load_sentences(path: &Path) -> FormatResult<Vec<String>> {
    let mut out = Vec::new();
    for line in open(path)?.lines() {
        let line = line.map_err(|e| FormatError::io(path, e))?;
        let line = line.trim();
        if !line.is_empty() {
            out.push(line.to_owned());
        }
    }
    Ok(out)
}

pub fn write_sentences<S: AsRef<str>>(path: &Path, sentences: &[S]) -> FormatResult<()> {
    let mut w = create(path)?;
    for s in sentences {
        writeln!(w, "{}", s.as_ref()).map_err(|e| FormatError::io(path, e))?;
    }
    w.flush().map_err(|e| FormatError::io(path, e))
}

/// Reads ranked results: `{"query_id", "hits": [{"doc_id", "score"}]}`.
pub fn load_results(path: &Path) -> FormatResult<Vec<RetrievalResult>> {
    Ok(parse_jsonl::<ResultLine, _>(open(path)?, path)?
        .into_iter()
        .map(|(_, r)| RetrievalResult {
            query_id: r.query_id,
            hits: r
                .hits
                .into_iter()
                .map(|h| Hit {
                    doc_id: h.doc_id,
                    score: h.score,
                })
                .collect(),
        })
        .collect())
}

pub fn write_results(path: &Path, results: &[RetrievalResult]) -> FormatResult<()> {
    let records = results.iter().map(|r| ResultLine {
        query_id: r.query_id.clone(),
        hits: r
            .hits
            .iter()
            .map(|h| HitLine {
                doc_id: h.doc_id.clone(),
                score: h.score,
            })
            .collect(),
    });
    write_jsonl(create(path)?, records, path)
}

/// Serializes a vocabulary: header `{"pad":0,"unk":1,"size":V}` then one
/// `{"token","id"}` line per id in order.
pub fn write_vocab_to<W: Write>(w: W, vocab: &Vocab, path: &Path) -> FormatResult<()> {
    let header = std::iter::once(serde_json::to_value(VocabHeader {
        pad: PAD_ID,
        unk: UNK_ID,
        size: vocab.len(),
    }));
    let lines = vocab.tokens().iter().enumerate().map(|(i, t)| {
        serde_json::to_value(VocabLine {
            token: t.clone(),
            id: i as u32,
        })
    });
    let values = header
        .chain(lines)
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| FormatError::io(path, e.into()))?;
    write_jsonl(w, values, path)
}

/// Parses the vocabulary format written by [`write_vocab_to`], checking that
/// ids are contiguous and the size matches the header.
pub fn read_vocab_from<R: Read>(r: R, path: &Path) -> FormatResult<Vocab> {
    let mut lines = BufReader::new(r).lines().enumerate();
    let (_, first) = lines
        .next()
        .ok_or_else(|| FormatError::record(path, 1, "missing vocabulary header"))?;
    let first = first.map_err(|e| FormatError::io(path, e))?;
    let header: VocabHeader =
        serde_json::from_str(&first).map_err(|e| FormatError::record(path, 1, e))?;
    if header.pad != PAD_ID || header.unk != UNK_ID {
        return Err(FormatError::record(path, 1, "unsupported pad/unk ids"));
    }
    let mut tokens = Vec::with_capacity(header.size);
    for (i, line) in lines {
        let line = line.map_err(|e| FormatError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: VocabLine =
            serde_json::from_str(&line).map_err(|e| FormatError::record(path, i + 1, e))?;
        if entry.id as usize != tokens.len() {
            return Err(FormatError::record(
                path,
                i + 1,
                format!("expected id {}, found {}", tokens.len(), entry.id),
            ));
        }
        tokens.push(entry.token);
    }
    if tokens.len() != header.size {
        return Err(FormatError::Integrity {
            path: path.into(),
            message: format!(
                "vocabulary header declares {} tokens, found {}",
                header.size,
                tokens.len()
            ),
        });
    }
    Vocab::from_tokens(tokens).map_err(|e| FormatError::record(path, 1, e))
}

pub fn write_vocab(path: &Path, vocab: &Vocab) -> FormatResult<()> {
    write_vocab_to(create(path)?, vocab, path)
}

pub fn load_vocab(path: &Path) -> FormatResult<Vocab> {
    read_vocab_from(open(path)?, path)
}
