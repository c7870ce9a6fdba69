//! Exact cosine top-K search over one index, and the dual-index merged search
//! used once write-back units exist.
//!
//! Vectors are L2-normalized when they enter an index, so similarity is a dot
//! product. Ordering is `(score desc, doc_id asc)` everywhere; the source label
//! never affects ranking.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, Embedder};
use crate::corpus::{CorpusStore, Source};

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("vector has non-finite values")]
    NonFinite,
    #[error("vector dimension must be positive")]
    ZeroDim,
    #[error("duplicate doc id {0:?} in index")]
    DuplicateId(String),
    #[error("embedding batch {batch} failed: {source}")]
    Embed {
        batch: usize,
        #[source]
        source: BackendError,
    },
    #[error("embedder returned {actual} vectors for batch {batch} of {expected} texts")]
    EmbedCount {
        batch: usize,
        expected: usize,
        actual: usize,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

/// Unit-length embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// L2-normalizes `values`. An all-zero input maps to the unit vector on
    /// coordinate 0.
    pub fn normalized(mut values: Vec<f64>) -> Result<Self, IndexError> {
        if values.is_empty() {
            return Err(IndexError::ZeroDim);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(IndexError::NonFinite);
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            values[0] = 1.0;
        } else {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub doc_id: String,
    pub score: f64,
    pub rank: usize,
    pub source: Source,
}

/// Ranking order: higher score first, then lexicographically smaller id.
pub fn hit_order(a_score: f64, a_id: &str, b_score: f64, b_id: &str) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_id.cmp(b_id))
}

/// Sorts candidates by [`hit_order`], keeps the first `k`, assigns ranks 1..n.
fn top_k(mut cands: Vec<(f64, &str, Source)>, k: usize) -> Vec<RetrievalHit> {
    let cmp = |a: &(f64, &str, Source), b: &(f64, &str, Source)| hit_order(a.0, a.1, b.0, b.1);
    if k == 0 {
        return Vec::new();
    }
    if cands.len() > k {
        cands.select_nth_unstable_by(k - 1, cmp);
        cands.truncate(k);
    }
    cands.sort_by(cmp);
    cands
        .into_iter()
        .enumerate()
        .map(|(i, (score, id, source))| RetrievalHit {
            doc_id: id.to_string(),
            score,
            rank: i + 1,
            source,
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct VectorIndex {
    dim: usize,
    label: Source,
    entries: Vec<(String, EmbeddingVector)>,
    ids: HashSet<String>,
}

#[derive(Serialize, Deserialize)]
struct IndexHeader {
    dim: usize,
    label: Source,
}

#[derive(Serialize, Deserialize)]
struct IndexRecord {
    doc_id: String,
    vector: Vec<f64>,
}

impl VectorIndex {
    pub fn new(dim: usize, label: Source) -> Self {
        Self {
            dim,
            label,
            entries: Vec::new(),
            ids: HashSet::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> Source {
        self.label
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(String, EmbeddingVector)] {
        &self.entries
    }

    /// Appends one entry at the end; existing entries are never reordered.
    pub fn append(&mut self, doc_id: impl Into<String>, vector: EmbeddingVector) -> Result<(), IndexError> {
        let doc_id = doc_id.into();
        if vector.dim() != self.dim {
            return Err(IndexError::DimMismatch {
                expected: self.dim,
                actual: vector.dim(),
            });
        }
        if !self.ids.insert(doc_id.clone()) {
            return Err(IndexError::DuplicateId(doc_id));
        }
        self.entries.push((doc_id, vector));
        Ok(())
    }

    /// Embeds and appends documents in batches. On error nothing from the
    /// failing batch onward is appended.
    pub fn append_documents<'a, I>(&mut self, docs: I, embedder: &dyn Embedder, batch_size: usize) -> Result<(), IndexError>
    where
        I: IntoIterator<Item = &'a crate::corpus::Document>,
    {
        let docs: Vec<_> = docs.into_iter().collect();
        for (batch, chunk) in docs.chunks(batch_size.max(1)).enumerate() {
            let texts: Vec<String> = chunk.iter().map(|d| d.retrieval_text()).collect();
            let vectors = embedder
                .embed(&texts)
                .map_err(|source| IndexError::Embed { batch, source })?;
            if vectors.len() != chunk.len() {
                return Err(IndexError::EmbedCount {
                    batch,
                    expected: chunk.len(),
                    actual: vectors.len(),
                });
            }
            // validate the whole batch before touching the index
            for v in &vectors {
                if v.dim() != self.dim {
                    return Err(IndexError::DimMismatch {
                        expected: self.dim,
                        actual: v.dim(),
                    });
                }
            }
            for (doc, v) in chunk.iter().zip(vectors) {
                self.append(doc.id.clone(), v)?;
            }
        }
        Ok(())
    }

    fn check_dim(&self, query: &EmbeddingVector) -> Result<(), IndexError> {
        if query.dim() != self.dim {
            return Err(IndexError::DimMismatch {
                expected: self.dim,
                actual: query.dim(),
            });
        }
        Ok(())
    }

    fn candidates(&self, query: &EmbeddingVector) -> Vec<(f64, &str, Source)> {
        self.entries
            .iter()
            .map(|(id, v)| (v.dot(query), id.as_str(), self.label))
            .collect()
    }

    /// Exact top-`k` by cosine similarity.
    pub fn search(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<RetrievalHit>, IndexError> {
        self.check_dim(query)?;
        Ok(top_k(self.candidates(query), k))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), IndexError> {
        let path = path.as_ref();
        let io_err = |source| IndexError::Io {
            path: path.to_path_buf(),
            source,
        };
        let file = fs::File::create(path).map_err(io_err)?;
        let mut w = BufWriter::new(file);
        write_json_line(
            &mut w,
            &IndexHeader {
                dim: self.dim,
                label: self.label,
            },
        )
        .map_err(io_err)?;
        for (doc_id, v) in &self.entries {
            let rec = IndexRecord {
                doc_id: doc_id.clone(),
                vector: v.values().to_vec(),
            };
            write_json_line(&mut w, &rec).map_err(io_err)?;
        }
        w.flush().map_err(io_err)
    }

    /// Reloads a saved index; vectors are re-normalized on load.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, IndexError> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|source| IndexError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let fmt_err = |line: usize, message: String| IndexError::Format {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = BufReader::new(file).lines().enumerate();
        let header: IndexHeader = match lines.next() {
            Some((_, Ok(l))) => serde_json::from_str(&l).map_err(|e| fmt_err(1, e.to_string()))?,
            Some((_, Err(source))) => {
                return Err(IndexError::Io {
                    path: path.to_path_buf(),
                    source,
                })
            }
            None => return Err(fmt_err(1, "missing header".into())),
        };
        if header.dim == 0 {
            return Err(fmt_err(1, "dim must be positive".into()));
        }
        let mut index = VectorIndex::new(header.dim, header.label);
        for (i, line) in lines {
            let line = line.map_err(|source| IndexError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: IndexRecord = serde_json::from_str(&line).map_err(|e| fmt_err(i + 1, e.to_string()))?;
            let v = EmbeddingVector::normalized(rec.vector).map_err(|e| fmt_err(i + 1, e.to_string()))?;
            index.append(rec.doc_id, v).map_err(|e| fmt_err(i + 1, e.to_string()))?;
        }
        Ok(index)
    }
}

fn write_json_line<W: Write, T: Serialize>(w: &mut W, value: &T) -> std::io::Result<()> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n")
}

/// Embeds every document of `docs` into a fresh index labeled `label`.
pub fn build_index(
    docs: &CorpusStore,
    embedder: &dyn Embedder,
    label: Source,
    batch_size: usize,
) -> Result<VectorIndex, IndexError> {
    let mut index = VectorIndex::new(embedder.dim(), label);
    index.append_documents(docs.iter(), embedder, batch_size)?;
    Ok(index)
}

/// Searches both indexes independently and keeps the global top-`merged_k`.
pub fn merged_search_with(
    original: &VectorIndex,
    original_k: usize,
    writeback: &VectorIndex,
    writeback_k: usize,
    query: &EmbeddingVector,
    merged_k: usize,
) -> Result<Vec<RetrievalHit>, IndexError> {
    let a = original.search(query, original_k)?;
    let b = writeback.search(query, writeback_k)?;
    let union: Vec<(f64, &str, Source)> = a
        .iter()
        .chain(b.iter())
        .map(|h| (h.score, h.doc_id.as_str(), h.source))
        .collect();
    Ok(top_k(union, merged_k))
}

/// Merged search with the same `k` for both indexes and the merge. Equals a
/// brute-force top-`k` over the concatenation of both indexes.
pub fn merged_search(
    original: &VectorIndex,
    writeback: &VectorIndex,
    query: &EmbeddingVector,
    k: usize,
) -> Result<Vec<RetrievalHit>, IndexError> {
    merged_search_with(original, k, writeback, k, query, k)
}
