//! Embedding files: magic `CAWEMB1\0`, u32 LE header length, JSON header
//! `{n, d, similarity}`, then `n` records of (u32 LE id length, UTF-8 id,
//! `d` x f32 LE). Also the import path for externally produced embeddings.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::{Path, PathBuf};

use causal_core::index::{IndexBuilder, VectorIndex};
use causal_core::loss::SimilarityKind;
use causal_core::Matrix;
use serde::{Deserialize, Serialize};

use crate::error::{FormatError, FormatResult};

pub const MAGIC: &[u8; 8] = b"CAWEMB1\0";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingHeader {
    pub n: usize,
    pub d: usize,
    pub similarity: String,
}

impl EmbeddingHeader {
    pub fn similarity_kind(&self) -> Option<SimilarityKind> {
        SimilarityKind::parse(&self.similarity)
    }
}

/// Streaming writer; the record count is fixed up front and checked on finish.
pub struct EmbeddingWriter<W: Write> {
    w: W,
    header: EmbeddingHeader,
    written: usize,
    path: PathBuf,
}

impl EmbeddingWriter<BufWriter<File>> {
    pub fn create(path: &Path, header: EmbeddingHeader) -> FormatResult<Self> {
        Self::new(crate::formats::create(path)?, header, path)
    }
}

impl<W: Write> EmbeddingWriter<W> {
    pub fn new(mut w: W, header: EmbeddingHeader, path: &Path) -> FormatResult<Self> {
        let json = serde_json::to_vec(&header).map_err(|e| FormatError::io(path, e.into()))?;
        w.write_all(MAGIC)
            .and_then(|_| w.write_all(&(json.len() as u32).to_le_bytes()))
            .and_then(|_| w.write_all(&json))
            .map_err(|e| FormatError::io(path, e))?;
        Ok(Self {
            w,
            header,
            written: 0,
            path: path.into(),
        })
    }

    pub fn push(&mut self, id: &str, vector: &[f64]) -> FormatResult<()> {
        if vector.len() != self.header.d || self.written == self.header.n {
            return Err(FormatError::Integrity {
                path: self.path.clone(),
                message: format!(
                    "record {} (`{id}`) of dimension {} does not fit header n={} d={}",
                    self.written,
                    vector.len(),
                    self.header.n,
                    self.header.d
                ),
            });
        }
        let mut buf = Vec::with_capacity(4 + id.len() + 4 * vector.len());
        buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
        buf.extend_from_slice(id.as_bytes());
        for &x in vector {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
        self.w
            .write_all(&buf)
            .map_err(|e| FormatError::io(&self.path, e))?;
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> FormatResult<W> {
        if self.written != self.header.n {
            return Err(FormatError::Integrity {
                path: self.path,
                message: format!(
                    "wrote {} records, header declares {}",
                    self.written, self.header.n
                ),
            });
        }
        self.w.flush().map_err(|e| FormatError::io(&self.path, e))?;
        Ok(self.w)
    }
}

/// Streaming reader yielding `(id, vector)` records.
pub struct EmbeddingReader<R: Read> {
    r: R,
    header: EmbeddingHeader,
    read: usize,
    done: bool,
    path: PathBuf,
}

impl EmbeddingReader<BufReader<File>> {
    pub fn open(path: &Path) -> FormatResult<Self> {
        Self::new(crate::formats::open(path)?, path)
    }
}

fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], path: &Path, what: &str) -> FormatResult<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => FormatError::Truncated {
            path: path.into(),
            message: format!("end of file inside {what}"),
        },
        _ => FormatError::io(path, e),
    })
}

impl<R: Read> EmbeddingReader<R> {
    pub fn new(mut r: R, path: &Path) -> FormatResult<Self> {
        let mut magic = [0u8; 8];
        let mut got = 0;
        while got < magic.len() {
            match r.read(&mut magic[got..]) {
                Ok(0) => break,
                Ok(n) => got += n,
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(e) => return Err(FormatError::io(path, e)),
            }
        }
        if magic[..got] != MAGIC[..got] {
            return Err(FormatError::BadMagic {
                path: path.into(),
                expected: MAGIC,
            });
        }
        if got < magic.len() {
            return Err(FormatError::Truncated {
                path: path.into(),
                message: "end of file inside magic bytes".into(),
            });
        }
        let mut len = [0u8; 4];
        read_exact_or(&mut r, &mut len, path, "header length")?;
        let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
        read_exact_or(&mut r, &mut json, path, "header")?;
        let header: EmbeddingHeader =
            serde_json::from_slice(&json).map_err(|e| FormatError::Header {
                path: path.into(),
                message: e.to_string(),
            })?;
        if header.similarity_kind().is_none() {
            return Err(FormatError::Header {
                path: path.into(),
                message: format!("unknown similarity `{}`", header.similarity),
            });
        }
        Ok(Self {
            r,
            header,
            read: 0,
            done: false,
            path: path.into(),
        })
    }

    pub fn header(&self) -> &EmbeddingHeader {
        &self.header
    }

    fn next_record(&mut self) -> FormatResult<(String, Vec<f32>)> {
        let what = format!("record {}", self.read);
        let mut len = [0u8; 4];
        read_exact_or(&mut self.r, &mut len, &self.path, &what)?;
        let mut id = vec![0u8; u32::from_le_bytes(len) as usize];
        read_exact_or(&mut self.r, &mut id, &self.path, &what)?;
        let id = String::from_utf8(id).map_err(|_| FormatError::Integrity {
            path: self.path.clone(),
            message: format!("{what}: id is not UTF-8"),
        })?;
        let mut raw = vec![0u8; 4 * self.header.d];
        read_exact_or(&mut self.r, &mut raw, &self.path, &what)?;
        let v = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        self.read += 1;
        Ok((id, v))
    }

    /// After the last record, rejects trailing bytes.
    fn check_end(&mut self) -> FormatResult<()> {
        let mut probe = [0u8; 1];
        match self.r.read(&mut probe) {
            Ok(0) => Ok(()),
            Ok(_) => Err(FormatError::Integrity {
                path: self.path.clone(),
                message: format!("data after the {} declared records", self.header.n),
            }),
            Err(e) => Err(FormatError::io(&self.path, e)),
        }
    }
}

impl<R: Read> Iterator for EmbeddingReader<R> {
    type Item = FormatResult<(String, Vec<f32>)>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        if self.read == self.header.n {
            self.done = true;
            return self.check_end().err().map(Err);
        }
        let item = self.next_record();
        self.done = item.is_err();
        Some(item)
    }
}

/// Builds an index chunk by chunk straight from an embedding file.
pub fn load_index(path: &Path, chunk_rows: usize) -> anyhow::Result<VectorIndex> {
    let reader = EmbeddingReader::open(path)?;
    let h = reader.header().clone();
    let sim = h.similarity_kind().expect("checked on open");
    let mut builder = IndexBuilder::new(h.d, sim, chunk_rows)?;
    for rec in reader {
        let (id, v) = rec?;
        builder.push_f32(id, &v)?;
    }
    Ok(builder.finish())
}

/// Reads a whole (small) embedding file, e.g. query vectors.
pub fn load_matrix(path: &Path) -> FormatResult<(EmbeddingHeader, Vec<String>, Matrix)> {
    let reader = EmbeddingReader::open(path)?;
    let h = reader.header().clone();
    let mut ids = Vec::with_capacity(h.n);
    let mut data = Vec::with_capacity(h.n * h.d);
    for rec in reader {
        let (id, v) = rec?;
        ids.push(id);
        data.extend(v.into_iter().map(f64::from));
    }
    let m = Matrix::from_vec(ids.len(), h.d, data).map_err(|e| FormatError::Integrity {
        path: path.into(),
        message: e.to_string(),
    })?;
    Ok((h, ids, m))
}
