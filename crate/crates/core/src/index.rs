//! Exact top-k retrieval over chunked `f32` storage.
//!
//! Scores are accumulated in `f64`. Ranking is by descending score with ties
//! broken by ascending doc id, so results do not depend on scan order or
//! chunk size.

use alloc::collections::{BTreeSet, BinaryHeap};
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::corpus::PoolEntry;
use crate::encoder::{encode, EncoderParams};
use crate::error::{Error, Result};
use crate::loss::SimilarityKind;
use crate::matrix::Matrix;
use crate::text::{encode_tokens, Vocab};

pub const DEFAULT_CHUNK_ROWS: usize = 65_536;

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub doc_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub query_id: String,
    /// Best first; at most `k` entries.
    pub hits: Vec<Hit>,
}

#[derive(Debug, Clone)]
pub struct VectorIndex {
    doc_ids: Vec<String>,
    chunks: Vec<Vec<f32>>,
    /// L2 norms of stored rows, used by cosine scoring.
    norms: Vec<f64>,
    d: usize,
    chunk_rows: usize,
    similarity: SimilarityKind,
}

/// Incremental builder; rows are appended to fixed-size chunks as they arrive.
#[derive(Debug)]
pub struct IndexBuilder {
    index: VectorIndex,
    seen: BTreeSet<String>,
}

impl IndexBuilder {
    pub fn new(d: usize, similarity: SimilarityKind, chunk_rows: usize) -> Result<Self> {
        if d == 0 || chunk_rows == 0 {
            return Err(Error::InvalidConfig(
                "index dimension and chunk size must be positive".into(),
            ));
        }
        Ok(Self {
            index: VectorIndex {
                doc_ids: Vec::new(),
                chunks: Vec::new(),
                norms: Vec::new(),
                d,
                chunk_rows,
                similarity,
            },
            seen: BTreeSet::new(),
        })
    }

    pub fn push(&mut self, doc_id: String, vector: &[f64]) -> Result<()> {
        let v: Vec<f32> = vector.iter().map(|&x| x as f32).collect();
        self.push_f32(doc_id, &v)
    }

    pub fn push_f32(&mut self, doc_id: String, vector: &[f32]) -> Result<()> {
        let idx = &mut self.index;
        if vector.len() != idx.d {
            return Err(Error::DimensionMismatch {
                context: "index row",
                expected: idx.d,
                found: vector.len(),
            });
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(alloc::format!("index row `{doc_id}`")));
        }
        if !self.seen.insert(doc_id.clone()) {
            return Err(Error::DuplicateId(doc_id));
        }
        if idx
            .chunks
            .last()
            .is_none_or(|c| c.len() == idx.chunk_rows * idx.d)
        {
            idx.chunks
                .push(Vec::with_capacity(idx.chunk_rows.min(4096) * idx.d));
        }
        idx.chunks
            .last_mut()
            .expect("pushed above")
            .extend_from_slice(vector);
        idx.norms.push(libm::sqrt(
            vector.iter().map(|&x| x as f64 * x as f64).sum(),
        ));
        idx.doc_ids.push(doc_id);
        Ok(())
    }

    pub fn finish(self) -> VectorIndex {
        self.index
    }
}

/// Heap entry ordered so that the worst candidate is the maximum.
#[derive(Debug, Clone, Copy)]
struct Candidate<'a> {
    score: f64,
    id: &'a str,
}

impl PartialEq for Candidate<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate<'_> {}

impl PartialOrd for Candidate<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then_with(|| self.id.cmp(other.id))
    }
}

struct TopK<'a> {
    k: usize,
    heap: BinaryHeap<Candidate<'a>>,
}

impl<'a> TopK<'a> {
    fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    #[inline]
    fn offer(&mut self, c: Candidate<'a>) {
        if self.heap.len() < self.k {
            self.heap.push(c);
        } else if let Some(worst) = self.heap.peek() {
            if c < *worst {
                self.heap.pop();
                self.heap.push(c);
            }
        }
    }

    fn into_hits(self) -> Vec<Hit> {
        self.heap
            .into_sorted_vec()
            .into_iter()
            .map(|c| Hit {
                doc_id: String::from(c.id),
                score: c.score,
            })
            .collect()
    }
}

impl VectorIndex {
    /// Builds an index from `(doc_id, vector)` entries in insertion order.
    pub fn build<I>(
        entries: I,
        d: usize,
        similarity: SimilarityKind,
        chunk_rows: usize,
    ) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Vec<f64>)>,
    {
        let mut b = IndexBuilder::new(d, similarity, chunk_rows)?;
        for (id, v) in entries {
            b.push(id, &v)?;
        }
        Ok(b.finish())
    }

    pub fn from_matrix(
        doc_ids: Vec<String>,
        m: &Matrix,
        similarity: SimilarityKind,
        chunk_rows: usize,
    ) -> Result<Self> {
        if doc_ids.len() != m.rows() {
            return Err(Error::DimensionMismatch {
                context: "doc ids vs matrix rows",
                expected: m.rows(),
                found: doc_ids.len(),
            });
        }
        let mut b = IndexBuilder::new(m.cols().max(1), similarity, chunk_rows)?;
        for (id, row) in doc_ids.into_iter().zip(m.iter_rows()) {
            b.push(id, row)?;
        }
        Ok(b.finish())
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn similarity(&self) -> SimilarityKind {
        self.similarity
    }

    pub fn chunk_count(&self) -> usize {
        self.chunks.len()
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    /// Stored row `i` (as `f32`).
    pub fn row(&self, i: usize) -> &[f32] {
        let (c, r) = (i / self.chunk_rows, i % self.chunk_rows);
        &self.chunks[c][r * self.d..(r + 1) * self.d]
    }

    fn check_query(&self, query: &[f64], k: usize) -> Result<()> {
        if k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if query.len() != self.d {
            return Err(Error::DimensionMismatch {
                context: "query",
                expected: self.d,
                found: query.len(),
            });
        }
        if query.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("query vector".into()));
        }
        Ok(())
    }

    #[inline]
    fn score(&self, query: &[f64], query_norm: f64, row: &[f32], doc: usize) -> f64 {
        let mut s = 0.0;
        for (q, x) in query.iter().zip(row) {
            s += q * *x as f64;
        }
        match self.similarity {
            SimilarityKind::Dot => s,
            SimilarityKind::Cosine => {
                let n = self.norms[doc];
                if n == 0.0 || query_norm == 0.0 {
                    0.0
                } else {
                    s / (n * query_norm)
                }
            }
        }
    }

    fn scan_chunk<'a>(&'a self, chunk: usize, query: &[f64], query_norm: f64, top: &mut TopK<'a>) {
        let base = chunk * self.chunk_rows;
        for (r, row) in self.chunks[chunk].chunks_exact(self.d).enumerate() {
            let doc = base + r;
            let score = self.score(query, query_norm, row, doc);
            top.offer(Candidate {
                score,
                id: &self.doc_ids[doc],
            });
        }
    }

    /// The `k` best entries for `query`.
    pub fn top_k(&self, query: &[f64], k: usize) -> Result<Vec<Hit>> {
        self.check_query(query, k)?;
        let qn = crate::matrix::norm(query);
        let mut top = TopK::new(k);
        for c in 0..self.chunks.len() {
            self.scan_chunk(c, query, qn, &mut top);
        }
        Ok(top.into_hits())
    }

    /// Per-query top-k; each chunk is scanned once for all queries.
    pub fn batch_top_k<S: AsRef<str>>(
        &self,
        query_ids: &[S],
        queries: &Matrix,
        k: usize,
    ) -> Result<Vec<RetrievalResult>> {
        if query_ids.len() != queries.rows() {
            return Err(Error::DimensionMismatch {
                context: "query ids vs query rows",
                expected: queries.rows(),
                found: query_ids.len(),
            });
        }
        let mut tops = Vec::with_capacity(queries.rows());
        let mut norms = Vec::with_capacity(queries.rows());
        for q in queries.iter_rows() {
            self.check_query(q, k)?;
            norms.push(crate::matrix::norm(q));
            tops.push(TopK::new(k));
        }
        for c in 0..self.chunks.len() {
            for (qi, top) in tops.iter_mut().enumerate() {
                self.scan_chunk(c, queries.row(qi), norms[qi], top);
            }
        }
        Ok(query_ids
            .iter()
            .zip(tops)
            .map(|(id, top)| RetrievalResult {
                query_id: String::from(id.as_ref()),
                hits: top.into_hits(),
            })
            .collect())
    }
}

/// Lazily encodes pool entries with `params` (the frozen semantic encoder),
/// yielding `(doc_id, vector)` in pool order.
pub fn embed_pool<'a, I>(
    pool: I,
    params: &'a EncoderParams,
    vocab: &'a Vocab,
    max_len: usize,
) -> impl Iterator<Item = Result<(String, Vec<f64>)>> + 'a
where
    I: IntoIterator<Item = &'a PoolEntry>,
    I::IntoIter: 'a,
{
    pool.into_iter().map(move |e| {
        let v = encode(params, &encode_tokens(vocab, &e.text, max_len))?;
        Ok((e.doc_id.clone(), v))
    })
}
