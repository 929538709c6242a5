//! Token-overlap retriever used as the fallback when EBR is not triggered.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::corpus::{Document, Query, SourceType};
use crate::index::{rank_order, Candidate, Source};

/// Lowercases and splits on every non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

fn distinct_tokens(text: &str) -> BTreeSet<String> {
    tokenize(text).into_iter().collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct InvertedIndex {
    postings: BTreeMap<String, Vec<String>>,
    /// Distinct token count of title + description.
    doc_lengths: BTreeMap<String, usize>,
    source_types: HashMap<String, SourceType>,
}

impl InvertedIndex {
    pub fn build(docs: &[Document]) -> Self {
        let mut index = InvertedIndex::default();
        for doc in docs {
            let tokens = distinct_tokens(&format!("{} {}", doc.title, doc.description));
            index.doc_lengths.insert(doc.doc_id.clone(), tokens.len());
            index
                .source_types
                .insert(doc.doc_id.clone(), doc.source_type);
            for t in tokens {
                index
                    .postings
                    .entry(t)
                    .or_default()
                    .push(doc.doc_id.clone());
            }
        }
        for list in index.postings.values_mut() {
            list.sort();
            list.dedup();
        }
        index
    }

    pub fn postings(&self, token: &str) -> &[String] {
        self.postings.get(token).map_or(&[], Vec::as_slice)
    }

    pub fn doc_length(&self, doc_id: &str) -> Option<usize> {
        self.doc_lengths.get(doc_id).copied()
    }

    pub fn n_tokens(&self) -> usize {
        self.postings.len()
    }

    /// Scores every document sharing a token with the query as
    /// `|query ∩ doc| / sqrt(|doc|)` over distinct tokens. Only documents of
    /// the query's source types are considered.
    pub fn search(&self, query: &Query, k: usize) -> Vec<Candidate> {
        if k == 0 {
            return Vec::new();
        }
        let mut overlap: HashMap<&str, usize> = HashMap::new();
        for token in distinct_tokens(&query.text) {
            for id in self.postings(&token) {
                *overlap.entry(id.as_str()).or_default() += 1;
            }
        }
        let mut hits: Vec<Candidate> = overlap
            .into_iter()
            .filter_map(|(id, n)| {
                let source_type = *self.source_types.get(id)?;
                query.sources.contains(&source_type).then(|| Candidate {
                    doc_id: id.to_string(),
                    raw_score: n as f64 / (self.doc_lengths[id] as f64).sqrt(),
                    source: Source::Text,
                    source_type,
                })
            })
            .collect();
        hits.sort_by(|a, b| rank_order(a.raw_score, &a.doc_id, b.raw_score, &b.doc_id));
        hits.truncate(k);
        hits
    }
}

/// Text score rescaled into [0, 1]: the cosine between the binary token
/// sets of query and document.
pub fn normalized_text_score(raw_score: f64, query_text: &str) -> f64 {
    let n = distinct_tokens(query_text).len();
    if n == 0 {
        return 0.0;
    }
    (raw_score / (n as f64).sqrt()).min(1.0)
}
