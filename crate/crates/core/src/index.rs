//! Exhaustive cosine top-k over precomputed document embeddings, with
//! physical removal and a tombstone list for integrity enforcement.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{read_jsonl, write_jsonl, Document, SourceType, Validate};
use crate::embed::{load_embeddings, write_embeddings, Embedding};
use crate::error::{Error, Result};

pub const EMBEDDINGS_FILE: &str = "embeddings.tsv";
pub const REMOVED_FILE: &str = "removed.jsonl";

/// Which retriever produced a candidate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Source {
    #[serde(rename = "EBR")]
    Ebr,
    Text,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Ebr => f.write_str("EBR"),
            Source::Text => f.write_str("Text"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub doc_id: String,
    pub raw_score: f64,
    pub source: Source,
    pub source_type: SourceType,
}

/// Descending score, ascending doc_id on ties.
pub fn rank_order(a_score: f64, a_id: &str, b_score: f64, b_id: &str) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_id.cmp(b_id))
}

pub fn cosine(u: &Embedding, v: &Embedding) -> Result<f64> {
    if u.dim() != v.dim() {
        return Err(Error::DimensionMismatch {
            expected: u.dim(),
            actual: v.dim(),
        });
    }
    Ok(dot(u.as_slice(), v.as_slice()).clamp(-1.0, 1.0))
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Tombstone {
    doc_id: String,
}

impl Validate for Tombstone {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.doc_id.is_empty() {
            return Err("empty doc_id".into());
        }
        Ok(())
    }
}

/// Flat index. Vectors are stored row-major in one buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorIndex {
    dim: usize,
    ids: Vec<String>,
    source_types: Vec<SourceType>,
    data: Vec<f64>,
    removed: BTreeSet<String>,
}

impl VectorIndex {
    pub fn empty(dim: usize) -> Self {
        VectorIndex {
            dim,
            ids: Vec::new(),
            source_types: Vec::new(),
            data: Vec::new(),
            removed: BTreeSet::new(),
        }
    }

    /// Entries follow document order. An empty corpus gives an empty index of
    /// dimension 0.
    pub fn build(docs: &[Document], embeddings: &BTreeMap<String, Embedding>) -> Result<Self> {
        let mut index = VectorIndex::empty(0);
        for (i, doc) in docs.iter().enumerate() {
            let emb = embeddings
                .get(&doc.doc_id)
                .ok_or_else(|| Error::MissingEmbedding(doc.doc_id.clone()))?;
            if i == 0 {
                index.dim = emb.dim();
            } else if emb.dim() != index.dim {
                return Err(Error::DimensionMismatch {
                    expected: index.dim,
                    actual: emb.dim(),
                });
            }
            index.ids.push(doc.doc_id.clone());
            index.source_types.push(doc.source_type);
            index.data.extend_from_slice(emb.as_slice());
        }
        Ok(index)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.ids.iter().any(|id| id == doc_id)
    }

    pub fn removed_ids(&self) -> &BTreeSet<String> {
        &self.removed
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.ids.iter().map(String::as_str)
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Top `k` entries by cosine similarity, optionally restricted to one
    /// source type. Removed documents are never returned.
    pub fn topk(
        &self,
        query: &Embedding,
        k: usize,
        source_filter: Option<SourceType>,
    ) -> Result<Vec<Candidate>> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if self.is_empty() {
            return Ok(Vec::new());
        }
        if query.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: query.dim(),
            });
        }
        let q = query.as_slice();
        let mut scored: Vec<(f64, usize)> = (0..self.ids.len())
            .filter(|&i| source_filter.is_none_or(|s| self.source_types[i] == s))
            .map(|i| (dot(q, self.row(i)).clamp(-1.0, 1.0), i))
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| {
            rank_order(a.0, &self.ids[a.1], b.0, &self.ids[b.1])
        };
        if scored.len() > k {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_unstable_by(cmp);
        Ok(scored
            .into_iter()
            .map(|(score, i)| Candidate {
                doc_id: self.ids[i].clone(),
                raw_score: score,
                source: Source::Ebr,
                source_type: self.source_types[i],
            })
            .collect())
    }

    /// Deletes the entry and records a tombstone. Returns the number of
    /// entries removed (0 when the id is absent or already removed).
    pub fn remove(&mut self, doc_id: &str) -> usize {
        let Some(pos) = self.ids.iter().position(|id| id == doc_id) else {
            return 0;
        };
        self.ids.remove(pos);
        self.source_types.remove(pos);
        self.data.drain(pos * self.dim..(pos + 1) * self.dim);
        self.removed.insert(doc_id.to_string());
        1
    }

    /// Writes `embeddings.tsv` and `removed.jsonl` into `dir`, creating it
    /// if needed.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let embeddings: Vec<(String, Embedding)> = (0..self.len())
            .map(|i| {
                let emb =
                    Embedding::from_raw(self.row(i).to_vec()).expect("index rows are unit vectors");
                (self.ids[i].clone(), emb)
            })
            .collect();
        write_embeddings(
            dir.join(EMBEDDINGS_FILE),
            embeddings.iter().map(|(id, e)| (id.as_str(), e)),
        )?;
        let tombstones: Vec<Tombstone> = self
            .removed
            .iter()
            .map(|id| Tombstone { doc_id: id.clone() })
            .collect();
        write_jsonl(dir.join(REMOVED_FILE), &tombstones)
    }

    /// Rebuilds an index saved by [`VectorIndex::save`]. Documents without an
    /// embedding must be tombstoned.
    pub fn load(dir: impl AsRef<Path>, docs: &[Document]) -> Result<Self> {
        let dir = dir.as_ref();
        let embeddings = load_embeddings(dir.join(EMBEDDINGS_FILE))?;
        let removed_path = dir.join(REMOVED_FILE);
        let tombstones: Vec<Tombstone> = if removed_path.exists() {
            read_jsonl(&removed_path)?
        } else {
            Vec::new()
        };
        let removed: BTreeSet<String> = tombstones.into_iter().map(|t| t.doc_id).collect();
        let live: Vec<Document> = docs
            .iter()
            .filter(|d| !removed.contains(&d.doc_id))
            .cloned()
            .collect();
        let mut index = VectorIndex::build(&live, &embeddings)?;
        index.removed = removed;
        Ok(index)
    }
}
