//! Deterministic stand-in for the two-tower model.
//!
//! Each tower hashes the character trigrams of the lowercased text into `d`
//! signed buckets, sums them and L2-normalizes. Both towers share the bucket
//! and sign assignment so that shared trigrams produce similar vectors; the
//! tower salt only perturbs the per-trigram weight (within ±10%), so the same
//! text embedded by the two towers lands close to, not exactly on, each other.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::corpus::Document;
use crate::error::{Error, Result};

pub const DEFAULT_DIM: usize = 64;
pub const MIN_DIM: usize = 8;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

const QUERY_SALT: &[u8] = b"ebr-guard/query-tower/v1";
const DOC_SALT: &[u8] = b"ebr-guard/doc-tower/v1";
const TOWER_WEIGHT_SPREAD: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Tower {
    Query,
    Doc,
}

impl Tower {
    fn salt(self) -> &'static [u8] {
        match self {
            Tower::Query => QUERY_SALT,
            Tower::Doc => DOC_SALT,
        }
    }
}

/// A unit-norm vector. `norm` is the L2 norm before normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    vector: Vec<f64>,
    norm: f64,
}

impl Embedding {
    /// Normalizes `raw`. Vectors already of unit norm are kept bit-for-bit.
    /// Fails on non-finite components or a zero vector.
    pub fn from_raw(raw: Vec<f64>) -> std::result::Result<Self, String> {
        if raw.is_empty() {
            return Err("empty vector".into());
        }
        if let Some(bad) = raw.iter().find(|x| !x.is_finite()) {
            return Err(format!("non-finite component {bad}"));
        }
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err("zero-norm vector".into());
        }
        if (norm - 1.0).abs() <= 4.0 * f64::EPSILON {
            return Ok(Embedding { vector: raw, norm });
        }
        let vector = raw.into_iter().map(|x| x / norm).collect();
        Ok(Embedding { vector, norm })
    }

    /// The standard basis vector `e_i` of dimension `d`.
    pub fn basis(d: usize, i: usize) -> Self {
        let mut vector = vec![0.0; d];
        vector[i] = 1.0;
        Embedding { vector, norm: 1.0 }
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.vector
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }
}

fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut h = FNV_OFFSET;
    for part in parts {
        for &b in *part {
            h ^= b as u64;
            h = h.wrapping_mul(FNV_PRIME);
        }
    }
    // splitmix64 finalizer: FNV's low bits are weak for small moduli.
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Character trigrams of the lowercased text. Text shorter than three
/// characters yields itself as the single gram.
pub fn trigrams(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.to_lowercase().chars().collect();
    if chars.len() < 3 {
        return vec![chars.into_iter().collect()];
    }
    chars.windows(3).map(|w| w.iter().collect()).collect()
}

pub fn embed_text(text: &str, tower: Tower, d: usize) -> Embedding {
    assert!(
        d >= MIN_DIM,
        "embedding dimension must be at least {MIN_DIM}"
    );
    if text.trim().is_empty() {
        return Embedding::basis(d, 0);
    }
    let mut raw = vec![0.0; d];
    for gram in trigrams(text) {
        let g = gram.as_bytes();
        let h = fnv1a(&[g]);
        let bucket = (h % d as u64) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        let u = (fnv1a(&[tower.salt(), g]) >> 11) as f64 / (1u64 << 53) as f64;
        let weight = 1.0 + TOWER_WEIGHT_SPREAD * (2.0 * u - 1.0);
        raw[bucket] += sign * weight;
    }
    // Signed buckets can cancel exactly; fall back to the zero guard.
    Embedding::from_raw(raw).unwrap_or_else(|_| Embedding::basis(d, 0))
}

/// Text fed to the document tower: title and description joined by a space.
pub fn document_text(doc: &Document) -> String {
    format!("{} {}", doc.title, doc.description)
}

pub fn embed_document(doc: &Document, d: usize) -> Embedding {
    embed_text(&document_text(doc), Tower::Doc, d)
}

/// Reads `doc_id<TAB>v1,v2,...,vd` lines; vectors are renormalized.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<BTreeMap<String, Embedding>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    let mut dim: Option<usize> = None;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| Error::MalformedRecord {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let (id, values) = line
            .split_once('\t')
            .ok_or_else(|| malformed("expected doc_id<TAB>values".into()))?;
        if id.is_empty() {
            return Err(malformed("empty doc_id".into()));
        }
        let raw = values
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| malformed(e.to_string()))?;
        match dim {
            None => dim = Some(raw.len()),
            Some(d) if d != raw.len() => {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: raw.len(),
                })
            }
            Some(_) => {}
        }
        let emb = Embedding::from_raw(raw).map_err(malformed)?;
        if out.insert(id.to_string(), emb).is_some() {
            return Err(Error::DuplicateId(id.to_string()));
        }
    }
    Ok(out)
}

pub fn write_embeddings<'a>(
    path: impl AsRef<Path>,
    entries: impl IntoIterator<Item = (&'a str, &'a Embedding)>,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (id, emb) in entries {
        let values: Vec<String> = emb.as_slice().iter().map(|v| v.to_string()).collect();
        writeln!(w, "{id}\t{}", values.join(",")).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
