//! Binary checkpoint format.
//!
//! Layout: magic `CAWAI1\0\0`, u32 LE header length, UTF-8 JSON header, then
//! the payload: (cause, effect, semantic) x (embedding, projection, bias) as
//! f32 LE, followed by the vocabulary in its JSONL form. Weights are held as
//! f64 in memory and truncated to f32 on save, so every save after the first
//! round-trips byte-exactly.

use std::io::Write;
use std::path::Path;

use causal_core::encoder::EncoderParams;
use causal_core::loss::SimilarityKind;
use causal_core::train::{Checkpoint, CheckpointMeta};
use causal_core::Matrix;
use serde::{Deserialize, Serialize};

use crate::error::{FormatError, FormatResult};
use crate::formats::{read_vocab_from, write_vocab_to};

pub const MAGIC: &[u8; 8] = b"CAWAI1\0\0";

/// JSON header preceding the payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub vocab_size: usize,
    pub d_emb: usize,
    pub d: usize,
    pub normalize_output: bool,
    pub beta: f64,
    pub similarity: String,
    pub step: u64,
    pub val_metric: f64,
    pub seed: u64,
    /// Length of everything after the header.
    pub payload_bytes: u64,
}

impl CheckpointHeader {
    /// Bytes taken by the three encoders' weights.
    fn weight_bytes(&self) -> Option<u64> {
        let (v, e, d) = (self.vocab_size as u64, self.d_emb as u64, self.d as u64);
        let per = v
            .checked_mul(e)?
            .checked_add(e.checked_mul(d)?)?
            .checked_add(d)?;
        per.checked_mul(3)?.checked_mul(4)
    }
}

fn push_f32s(out: &mut Vec<u8>, xs: &[f64]) {
    for &x in xs {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
}

/// Serializes a checkpoint.
pub fn to_bytes(ckpt: &Checkpoint, path: &Path) -> FormatResult<Vec<u8>> {
    let integrity = |message: String| FormatError::Integrity {
        path: path.into(),
        message,
    };
    ckpt.validate().map_err(|e| integrity(e.to_string()))?;
    let normalize = ckpt.semantic.normalize_output;
    if ckpt.cause.normalize_output != normalize || ckpt.effect.normalize_output != normalize {
        return Err(integrity(
            "encoders disagree on output normalization".into(),
        ));
    }
    let mut payload = Vec::new();
    for p in [&ckpt.cause, &ckpt.effect, &ckpt.semantic] {
        push_f32s(&mut payload, p.embedding.as_slice());
        push_f32s(&mut payload, p.projection.as_slice());
        push_f32s(&mut payload, &p.bias);
    }
    write_vocab_to(&mut payload, &ckpt.vocab, path)?;
    let header = CheckpointHeader {
        vocab_size: ckpt.vocab.len(),
        d_emb: ckpt.semantic.d_emb(),
        d: ckpt.semantic.d(),
        normalize_output: normalize,
        beta: ckpt.meta.beta,
        similarity: ckpt.meta.similarity.as_str().to_owned(),
        step: ckpt.meta.step,
        val_metric: ckpt.meta.val_metric,
        seed: ckpt.meta.seed,
        payload_bytes: payload.len() as u64,
    };
    let header = serde_json::to_vec(&header).map_err(|e| integrity(e.to_string()))?;
    let mut out = Vec::with_capacity(12 + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Splits a checkpoint file into its header and payload, checking magic and
/// lengths.
fn split<'a>(bytes: &'a [u8], path: &Path) -> FormatResult<(CheckpointHeader, &'a [u8])> {
    let truncated = |message: String| FormatError::Truncated {
        path: path.into(),
        message,
    };
    let prefix = bytes.len().min(MAGIC.len());
    if bytes[..prefix] != MAGIC[..prefix] {
        return Err(FormatError::BadMagic {
            path: path.into(),
            expected: MAGIC,
        });
    }
    if bytes.len() < 12 {
        return Err(truncated(format!(
            "{} bytes is shorter than the fixed preamble",
            bytes.len()
        )));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = &bytes[12..];
    if body.len() < header_len {
        return Err(truncated(format!(
            "header needs {header_len} bytes, {} present",
            body.len()
        )));
    }
    let header: CheckpointHeader =
        serde_json::from_slice(&body[..header_len]).map_err(|e| FormatError::Header {
            path: path.into(),
            message: e.to_string(),
        })?;
    let payload = &body[header_len..];
    let declared = header.payload_bytes;
    if (payload.len() as u64) < declared {
        return Err(truncated(format!(
            "payload needs {declared} bytes, {} present",
            payload.len()
        )));
    }
    if payload.len() as u64 > declared {
        return Err(FormatError::Integrity {
            path: path.into(),
            message: format!(
                "{} trailing bytes after payload",
                payload.len() as u64 - declared
            ),
        });
    }
    Ok((header, payload))
}

struct F32Reader<'a> {
    bytes: &'a [u8],
}

impl F32Reader<'_> {
    fn take(&mut self, n: usize) -> Vec<f64> {
        let (head, rest) = self.bytes.split_at(n * 4);
        self.bytes = rest;
        head.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect()
    }
}

/// Parses a checkpoint. Bad magic, a payload shorter than declared, and
/// dimensions inconsistent with the payload are reported as distinct errors.
pub fn from_bytes(bytes: &[u8], path: &Path) -> FormatResult<Checkpoint> {
    let (h, payload) = split(bytes, path)?;
    let integrity = |message: String| FormatError::Integrity {
        path: path.into(),
        message,
    };
    let weight_bytes = h
        .weight_bytes()
        .filter(|&w| w <= h.payload_bytes)
        .ok_or_else(|| {
            integrity(format!(
                "dimensions vocab_size={} d_emb={} d={} do not fit in {} payload bytes",
                h.vocab_size, h.d_emb, h.d, h.payload_bytes
            ))
        })? as usize;
    let similarity = SimilarityKind::parse(&h.similarity).ok_or_else(|| FormatError::Header {
        path: path.into(),
        message: format!("unknown similarity `{}`", h.similarity),
    })?;
    let mut reader = F32Reader {
        bytes: &payload[..weight_bytes],
    };
    let mut encoders = Vec::with_capacity(3);
    for _ in 0..3 {
        let embedding =
            Matrix::from_vec(h.vocab_size, h.d_emb, reader.take(h.vocab_size * h.d_emb))
                .map_err(|e| integrity(e.to_string()))?;
        let projection = Matrix::from_vec(h.d_emb, h.d, reader.take(h.d_emb * h.d))
            .map_err(|e| integrity(e.to_string()))?;
        encoders.push(EncoderParams {
            embedding,
            projection,
            bias: reader.take(h.d),
            normalize_output: h.normalize_output,
        });
    }
    let vocab = read_vocab_from(&payload[weight_bytes..], path).map_err(|e| match e {
        FormatError::Io { .. } => e,
        other => integrity(format!("vocabulary section: {other}")),
    })?;
    if vocab.len() != h.vocab_size {
        return Err(integrity(format!(
            "header vocab_size {} but vocabulary section has {} tokens",
            h.vocab_size,
            vocab.len()
        )));
    }
    let semantic = encoders.pop().expect("three encoders");
    let effect = encoders.pop().expect("three encoders");
    let cause = encoders.pop().expect("three encoders");
    let ckpt = Checkpoint {
        cause,
        effect,
        semantic,
        vocab,
        meta: CheckpointMeta {
            beta: h.beta,
            similarity,
            step: h.step,
            val_metric: h.val_metric,
            seed: h.seed,
        },
    };
    ckpt.validate().map_err(|e| integrity(e.to_string()))?;
    Ok(ckpt)
}

pub fn save(ckpt: &Checkpoint, path: &Path) -> FormatResult<()> {
    let bytes = to_bytes(ckpt, path)?;
    let mut f = crate::formats::create(path)?;
    f.write_all(&bytes)
        .and_then(|_| f.flush())
        .map_err(|e| FormatError::io(path, e))
}

pub fn load(path: &Path) -> FormatResult<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| FormatError::io(path, e))?;
    from_bytes(&bytes, path)
}

/// Header only, without decoding weights.
pub fn read_header(path: &Path) -> FormatResult<CheckpointHeader> {
    let bytes = std::fs::read(path).map_err(|e| FormatError::io(path, e))?;
    split(&bytes, path).map(|(h, _)| h)
}
