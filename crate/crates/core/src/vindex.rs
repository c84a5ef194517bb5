//! Exact cosine-similarity vector store.
//!
//! Records keep insertion order, and search is a full linear scan, so results
//! are exact and ties always resolve to the earlier record.
//!
//! On-disk layout, all integers little-endian:
//!
//! ```text
//! "AVIX" | version: u32 = 1 | dim: u32 | count: u64
//! count x ( id_len: u32 | id bytes | doc_len: u32 | doc_id bytes | dim x f32 )
//! ```

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::embed::{dot, EmbeddingVector};

pub const MAGIC: &[u8; 4] = b"AVIX";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("duplicate chunk id {0:?}")]
    DuplicateChunkId(String),
    #[error("dimension mismatch: index has {expected}, vector has {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("corrupt index at byte {offset}: {reason}")]
    CorruptIndex { offset: usize, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchHit {
    pub chunk_id: String,
    pub doc_id: String,
    pub score: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dim: usize,
    chunk_ids: Vec<String>,
    doc_ids: Vec<String>,
    /// Row-major, `dim` floats per record.
    data: Vec<f32>,
    positions: HashMap<String, usize>,
}

impl VectorIndex {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            chunk_ids: Vec::new(),
            doc_ids: Vec::new(),
            data: Vec::new(),
            positions: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.chunk_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunk_ids.is_empty()
    }

    pub fn contains(&self, chunk_id: &str) -> bool {
        self.positions.contains_key(chunk_id)
    }

    pub fn vector(&self, chunk_id: &str) -> Option<EmbeddingVector> {
        let i = *self.positions.get(chunk_id)?;
        EmbeddingVector::from_unit(self.row(i).to_vec()).ok()
    }

    /// `(chunk_id, doc_id)` pairs in insertion order.
    pub fn records(&self) -> impl Iterator<Item = (&str, &str)> {
        self.chunk_ids
            .iter()
            .zip(&self.doc_ids)
            .map(|(c, d)| (c.as_str(), d.as_str()))
    }

    fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn add(&mut self, chunk_id: &str, doc_id: &str, vector: &EmbeddingVector) -> Result<(), IndexError> {
        if vector.dim() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                found: vector.dim(),
            });
        }
        if self.positions.contains_key(chunk_id) {
            return Err(IndexError::DuplicateChunkId(chunk_id.to_string()));
        }
        self.positions.insert(chunk_id.to_string(), self.chunk_ids.len());
        self.chunk_ids.push(chunk_id.to_string());
        self.doc_ids.push(doc_id.to_string());
        self.data.extend_from_slice(vector.values());
        Ok(())
    }

    /// The `k` highest-scoring records, optionally restricted to a set of
    /// documents. Scores are dot products (cosine for unit vectors).
    pub fn search_topk(
        &self,
        query: &EmbeddingVector,
        k: usize,
        doc_filter: Option<&HashSet<String>>,
    ) -> Result<Vec<SearchHit>, IndexError> {
        if query.dim() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                found: query.dim(),
            });
        }
        let mut scored: Vec<(usize, f64)> = (0..self.len())
            .filter(|&i| doc_filter.is_none_or(|f| f.contains(&self.doc_ids[i])))
            .map(|i| (i, dot(self.row(i), query.values())))
            .collect();
        let by_rank = |a: &(usize, f64), b: &(usize, f64)| {
            b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0))
        };
        if k < scored.len() {
            scored.select_nth_unstable_by(k, by_rank);
            scored.truncate(k);
        }
        scored.sort_by(by_rank);
        Ok(scored
            .into_iter()
            .enumerate()
            .map(|(rank, (i, score))| SearchHit {
                chunk_id: self.chunk_ids[i].clone(),
                doc_id: self.doc_ids[i].clone(),
                score,
                rank,
            })
            .collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.data.len() * 4 + self.len() * 40);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for i in 0..self.len() {
            for s in [&self.chunk_ids[i], &self.doc_ids[i]] {
                out.extend_from_slice(&(s.len() as u32).to_le_bytes());
                out.extend_from_slice(s.as_bytes());
            }
            for v in self.row(i) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IndexError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(IndexError::CorruptIndex {
                offset: 0,
                reason: "bad magic (expected \"AVIX\")".into(),
            });
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(r.corrupt_at(4, format!("unsupported version {version}")));
        }
        let dim = r.u32("dim")? as usize;
        if dim == 0 {
            return Err(r.corrupt_at(8, "dim is zero".into()));
        }
        let count = r.u64("count")?;
        let mut index = Self::new(dim);
        for n in 0..count {
            let record_start = r.pos;
            let chunk_id = r.string("chunk id")?;
            let doc_id = r.string("doc id")?;
            let raw = r.take(dim * 4, "vector")?;
            let values: Vec<f32> = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            let vector = EmbeddingVector::from_unit(values)
                .map_err(|e| r.corrupt_at(record_start, format!("record {n}: {e}")))?;
            index
                .add(&chunk_id, &doc_id, &vector)
                .map_err(|e| r.corrupt_at(record_start, format!("record {n}: {e}")))?;
        }
        if r.pos != bytes.len() {
            return Err(r.corrupt_at(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(index)
    }

    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        fs::write(path, self.to_bytes()).map_err(|source| IndexError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let bytes = fs::read(path).map_err(|source| IndexError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

/// Keeps hits scoring at least `threshold`, renumbering ranks densely.
pub fn filter_by_threshold(hits: Vec<SearchHit>, threshold: f64) -> Vec<SearchHit> {
    hits.into_iter()
        .filter(|h| h.score >= threshold)
        .enumerate()
        .map(|(rank, h)| SearchHit { rank, ..h })
        .collect()
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn corrupt_at(&self, offset: usize, reason: String) -> IndexError {
        IndexError::CorruptIndex { offset, reason }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], IndexError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(self.corrupt_at(
                self.pos,
                format!(
                    "truncated reading {what}: need {n} bytes, {} remain",
                    self.bytes.len() - self.pos
                ),
            )),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32, IndexError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self, what: &str) -> Result<u64, IndexError> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn string(&mut self, what: &str) -> Result<String, IndexError> {
        let len = self.u32(what)? as usize;
        let start = self.pos;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.corrupt_at(start, format!("{what} is not UTF-8")))
    }
}
