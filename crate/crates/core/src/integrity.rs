//! Ground-truth integrity labels, index removal and rule-based demotion.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use crate::corpus::{read_jsonl, Document, IntegrityLabel, IntegrityReason, Severity};
use crate::error::{Error, Result};
use crate::index::VectorIndex;
use crate::pipeline::PageResult;

/// Maps an integrity reason to the enforcement it triggers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeverityPolicy {
    map: BTreeMap<IntegrityReason, Severity>,
}

impl Default for SeverityPolicy {
    fn default() -> Self {
        SeverityPolicy {
            map: [
                (IntegrityReason::Misinformation, Severity::Removable),
                (IntegrityReason::Offensive, Severity::Removable),
                (IntegrityReason::Untrustworthy, Severity::Demotable),
                (IntegrityReason::Other, Severity::Demotable),
            ]
            .into(),
        }
    }
}

impl SeverityPolicy {
    pub fn with(mut self, reason: IntegrityReason, severity: Severity) -> Self {
        self.map.insert(reason, severity);
        self
    }

    pub fn severity(&self, reason: IntegrityReason) -> Severity {
        self.map
            .get(&reason)
            .copied()
            .unwrap_or(Severity::Demotable)
    }
}

/// One label per document; later writes win and every write is kept in the
/// audit trail.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IntegrityStore {
    labels: BTreeMap<String, IntegrityLabel>,
    audit: Vec<IntegrityLabel>,
    clock: u64,
}

impl IntegrityStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn label(
        &mut self,
        doc_id: &str,
        severity: Severity,
        reason: IntegrityReason,
    ) -> &IntegrityLabel {
        self.clock += 1;
        self.record(IntegrityLabel {
            doc_id: doc_id.to_string(),
            severity,
            reason,
            ts: self.clock,
        })
    }

    fn record(&mut self, label: IntegrityLabel) -> &IntegrityLabel {
        self.clock = self.clock.max(label.ts);
        self.audit.push(label.clone());
        let id = label.doc_id.clone();
        self.labels.insert(id.clone(), label);
        &self.labels[&id]
    }

    /// Replays labels in file order; a later line wins unless it carries an
    /// older timestamp.
    pub fn insert(&mut self, label: IntegrityLabel) {
        if let Some(current) = self.labels.get(&label.doc_id) {
            if label.ts < current.ts {
                self.audit.push(label);
                return;
            }
        }
        self.record(label);
    }

    pub fn lookup(&self, doc_id: &str) -> Option<&IntegrityLabel> {
        self.labels.get(doc_id)
    }

    pub fn severity(&self, doc_id: &str) -> Option<Severity> {
        self.lookup(doc_id).map(|l| l.severity)
    }

    pub fn audit(&self) -> &[IntegrityLabel] {
        &self.audit
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> impl Iterator<Item = &IntegrityLabel> {
        self.labels.values()
    }

    /// Collects the labels carried on corpus records.
    pub fn from_corpus(docs: &[Document]) -> Self {
        let mut store = IntegrityStore::new();
        for label in docs.iter().filter_map(|d| d.integrity_label.clone()) {
            store.insert(label);
        }
        store
    }

    /// Loads `labels.jsonl`. A missing file is an empty store.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut store = IntegrityStore::new();
        if !path.exists() {
            return Ok(store);
        }
        for label in read_jsonl::<IntegrityLabel>(path)? {
            store.insert(label);
        }
        Ok(store)
    }

    /// Appends one label to `labels.jsonl`, timestamped after every label
    /// already in the file.
    pub fn append(
        path: impl AsRef<Path>,
        doc_id: &str,
        severity: Severity,
        reason: IntegrityReason,
    ) -> Result<IntegrityLabel> {
        let path = path.as_ref();
        let mut store = IntegrityStore::load(path)?;
        let label = store.label(doc_id, severity, reason).clone();
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let line = serde_json::to_string(&label).expect("label serializes");
        writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
        Ok(label)
    }

    /// Removes every Removable document from `index`. Returns how many
    /// entries were newly removed.
    pub fn apply_index_removal(&self, index: &mut VectorIndex) -> usize {
        self.labels
            .values()
            .filter(|l| l.severity == Severity::Removable)
            .map(|l| index.remove(&l.doc_id))
            .sum()
    }

    /// Stable partition: non-demoted results first, Demotable results after
    /// them in their original order, Removable results dropped.
    pub fn apply_demotion(&self, results: Vec<PageResult>) -> Vec<PageResult> {
        let (mut kept, mut demoted): (Vec<_>, Vec<_>) = (Vec::new(), Vec::new());
        for mut r in results {
            match self.severity(&r.doc_id) {
                Some(Severity::Removable) => {}
                Some(Severity::Demotable) => {
                    r.demoted = true;
                    demoted.push(r);
                }
                None => kept.push(r),
            }
        }
        kept.append(&mut demoted);
        kept
    }
}
