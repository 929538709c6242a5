//! One search request end to end: trigger check, EBR top-k, sigmoid
//! calibration, per-segment discard, merge with text retrieval and
//! integrity demotion.

mod calibrate;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Query, SourceType, Validate};
use crate::embed::{embed_text, Tower};
use crate::error::{Error, Result};
use crate::index::{Candidate, Source, VectorIndex};
use crate::integrity::IntegrityStore;
use crate::text::{normalized_text_score, InvertedIndex};
use crate::threshold::ThresholdModel;
use crate::trigger::{TriggerAction, TriggerRules};

pub use calibrate::{apply_threshold, sigmoid_transform, SigmoidParams, NO_DISCARD};

pub const DEFAULT_K: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PageResult {
    pub doc_id: String,
    pub transformed_score: f64,
    pub source: Source,
    pub demoted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultPage {
    pub query_id: String,
    pub results: Vec<PageResult>,
    pub ebr_triggered: bool,
}

impl ResultPage {
    pub fn doc_ids(&self) -> Vec<String> {
        self.results.iter().map(|r| r.doc_id.clone()).collect()
    }
}

impl Validate for ResultPage {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.query_id.is_empty() {
            return Err("empty query_id".into());
        }
        let mut seen = std::collections::HashSet::new();
        match self
            .results
            .iter()
            .find(|r| !seen.insert(r.doc_id.as_str()))
        {
            Some(dup) => Err(format!("{} listed twice", dup.doc_id)),
            None => Ok(()),
        }
    }
}

/// How EBR candidates are discarded after calibration.
#[derive(Clone, Copy, Debug)]
pub enum DiscardPolicy<'a> {
    /// Keep everything (the logging configuration).
    Off,
    /// One threshold for every segment.
    Global(f64),
    /// Per-segment thresholds predicted by a fitted model.
    Segmented(&'a ThresholdModel),
}

impl DiscardPolicy<'_> {
    pub fn threshold(&self, query: &Query, source_type: SourceType) -> f64 {
        match self {
            DiscardPolicy::Off => NO_DISCARD,
            DiscardPolicy::Global(t) => *t,
            DiscardPolicy::Segmented(model) => model.predict_threshold(&query.segment(source_type)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RetrieveConfig {
    pub k: usize,
    pub sigmoid: SigmoidParams,
    /// Merge text-retrieval candidates even when EBR fires.
    pub merge_text: bool,
}

impl Default for RetrieveConfig {
    fn default() -> Self {
        RetrieveConfig {
            k: DEFAULT_K,
            sigmoid: SigmoidParams::default(),
            merge_text: true,
        }
    }
}

/// Immutable view over the components of one deployment.
#[derive(Clone, Copy)]
pub struct Retriever<'a> {
    pub index: &'a VectorIndex,
    pub text_index: &'a InvertedIndex,
    pub discard: DiscardPolicy<'a>,
    pub rules: &'a TriggerRules,
    pub integrity: &'a IntegrityStore,
    pub config: RetrieveConfig,
}

struct Scored {
    doc_id: String,
    score: f64,
    source: Source,
}

/// Descending score, EBR before Text, ascending doc_id.
fn merge_order(a: &Scored, b: &Scored) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.source.cmp(&b.source))
        .then_with(|| a.doc_id.cmp(&b.doc_id))
}

impl Retriever<'_> {
    /// Source types for which EBR fires on this query.
    pub fn ebr_sources(&self, query: &Query) -> Vec<SourceType> {
        query
            .sources
            .iter()
            .copied()
            .filter(|&st| self.rules.evaluate_query(query, st) == TriggerAction::Enable)
            .collect()
    }

    /// EBR candidates after calibration and discard, as `(candidate,
    /// transformed score)`.
    pub fn ebr_candidates(&self, query: &Query) -> Result<Vec<(Candidate, f64)>> {
        let sources = self.ebr_sources(query);
        if sources.is_empty() || self.index.is_empty() {
            return Ok(Vec::new());
        }
        let filter = match sources.as_slice() {
            [only] => Some(*only),
            _ => None,
        };
        let q = embed_text(&query.text, Tower::Query, self.index.dim());
        let candidates = self.index.topk(&q, self.config.k, filter)?;
        let thresholds: HashMap<SourceType, f64> = sources
            .iter()
            .map(|&st| (st, self.discard.threshold(query, st)))
            .collect();
        Ok(candidates
            .into_iter()
            .map(|c| {
                let t = sigmoid_transform(c.raw_score, self.config.sigmoid);
                (c, t)
            })
            .filter(|(c, t)| *t >= thresholds[&c.source_type])
            .collect())
    }

    pub fn retrieve(&self, query: &Query) -> Result<ResultPage> {
        if self.config.k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        let ebr_triggered = !self.ebr_sources(query).is_empty();
        let mut merged: HashMap<String, Scored> = HashMap::new();
        let mut offer = |s: Scored| match merged.get(&s.doc_id) {
            Some(existing) if merge_order(existing, &s).is_le() => {}
            _ => {
                merged.insert(s.doc_id.clone(), s);
            }
        };
        for (c, t) in self.ebr_candidates(query)? {
            offer(Scored {
                doc_id: c.doc_id,
                score: t,
                source: Source::Ebr,
            });
        }
        if self.config.merge_text || !ebr_triggered {
            for c in self.text_index.search(query, self.config.k) {
                let normalized = normalized_text_score(c.raw_score, &query.text);
                offer(Scored {
                    doc_id: c.doc_id,
                    score: sigmoid_transform(normalized, self.config.sigmoid),
                    source: Source::Text,
                });
            }
        }
        let mut ranked: Vec<Scored> = merged.into_values().collect();
        ranked.sort_by(merge_order);
        let results: Vec<PageResult> = ranked
            .into_iter()
            .map(|s| PageResult {
                doc_id: s.doc_id,
                transformed_score: s.score,
                source: s.source,
                demoted: false,
            })
            .collect();
        let mut results = self.integrity.apply_demotion(results);
        results.truncate(self.config.k);
        Ok(ResultPage {
            query_id: query.query_id.clone(),
            results,
            ebr_triggered,
        })
    }

    pub fn retrieve_all(&self, queries: &[Query]) -> Result<Vec<ResultPage>> {
        queries.iter().map(|q| self.retrieve(q)).collect()
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::corpus::{Document, IntegrityReason, Intent, Severity};
    use crate::embed::{embed_document, Embedding};

    fn doc(id: &str, title: &str, st: SourceType) -> Document {
        Document {
            doc_id: id.into(),
            title: title.into(),
            description: String::new(),
            language: "en".into(),
            country: "US".into(),
            region: "CA".into(),
            topic: "t".into(),
            source_type: st,
            integrity_label: None,
        }
    }

    fn query(text: &str, intent: Intent) -> Query {
        Query {
            query_id: "q1".into(),
            text: text.into(),
            language: "en".into(),
            country: "US".into(),
            region: "CA".into(),
            intent,
            sources: SourceType::ALL.to_vec(),
        }
    }

    struct Fixture {
        index: VectorIndex,
        text: InvertedIndex,
        rules: TriggerRules,
        store: IntegrityStore,
    }

    impl Fixture {
        fn new(docs: &[Document]) -> Self {
            let embs: BTreeMap<String, Embedding> = docs
                .iter()
                .map(|d| (d.doc_id.clone(), embed_document(d, 64)))
                .collect();
            Fixture {
                index: VectorIndex::build(docs, &embs).unwrap(),
                text: InvertedIndex::build(docs),
                rules: TriggerRules::default_rules(),
                store: IntegrityStore::new(),
            }
        }

        fn retriever<'a>(&'a self, discard: DiscardPolicy<'a>) -> Retriever<'a> {
            Retriever {
                index: &self.index,
                text_index: &self.text,
                discard,
                rules: &self.rules,
                integrity: &self.store,
                config: RetrieveConfig::default(),
            }
        }
    }

    fn hiking_docs() -> Vec<Document> {
        vec![
            doc("a", "hiking club seattle", SourceType::Unconnected),
            doc("b", "hiking clubs of seattle", SourceType::Unconnected),
            doc("c", "seattle hikers", SourceType::Connected),
        ]
    }

    #[test]
    fn disabled_pair_serves_text_only() {
        let fx = Fixture::new(&hiking_docs());
        let mut q = query("hiking club", Intent::PersonName);
        q.sources = vec![SourceType::Unconnected];
        let page = fx.retriever(DiscardPolicy::Off).retrieve(&q).unwrap();
        assert!(!page.ebr_triggered);
        assert!(!page.results.is_empty());
        assert!(page.results.iter().all(|r| r.source == Source::Text));
    }

    #[test]
    fn empty_corpus_gives_empty_page() {
        let fx = Fixture::new(&[]);
        let page = fx
            .retriever(DiscardPolicy::Off)
            .retrieve(&query("anything", Intent::GroupTopic))
            .unwrap();
        assert!(page.results.is_empty());
    }

    #[test]
    fn demoted_top_doc_goes_last() {
        let mut fx = Fixture::new(&hiking_docs());
        let q = query("hiking club seattle", Intent::GroupTopic);
        let before = fx.retriever(DiscardPolicy::Off).retrieve(&q).unwrap();
        assert_eq!(before.results[0].doc_id, "a");
        fx.store
            .label("a", Severity::Demotable, IntegrityReason::Untrustworthy);
        let after = fx.retriever(DiscardPolicy::Off).retrieve(&q).unwrap();
        let ids = after.doc_ids();
        assert_eq!(ids.last().unwrap(), "a");
        assert!(after.results.last().unwrap().demoted);
        let rest: Vec<_> = before
            .doc_ids()
            .into_iter()
            .filter(|id| id != "a")
            .collect();
        assert_eq!(&ids[..ids.len() - 1], rest.as_slice());
    }

    #[test]
    fn global_threshold_discards_ebr_only() {
        let fx = Fixture::new(&hiking_docs());
        let q = query("hiking club seattle", Intent::GroupTopic);
        let page = fx
            .retriever(DiscardPolicy::Global(1.0))
            .retrieve(&q)
            .unwrap();
        assert!(page.ebr_triggered);
        assert!(page.results.iter().all(|r| r.source == Source::Text));
    }

    #[test]
    fn duplicates_keep_higher_score() {
        let fx = Fixture::new(&hiking_docs());
        let q = query("hiking club seattle", Intent::GroupTopic);
        let page = fx.retriever(DiscardPolicy::Off).retrieve(&q).unwrap();
        let mut ids = page.doc_ids();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), page.results.len());
        let a = &page.results[0];
        // Exact title: text set-cosine is 1.0, above the EBR cosine.
        assert_eq!(a.source, Source::Text);
        assert_eq!(
            a.transformed_score,
            sigmoid_transform(1.0, SigmoidParams::default())
        );
    }

    #[test]
    fn merge_prefers_ebr_on_ties() {
        let e = Scored {
            doc_id: "b".into(),
            score: 0.6,
            source: Source::Ebr,
        };
        let t = Scored {
            doc_id: "a".into(),
            score: 0.6,
            source: Source::Text,
        };
        assert!(merge_order(&e, &t).is_lt());
    }
}
