//! Corpus, query, log and judgment records plus their line-delimited JSON
//! files (`corpus.jsonl`, `queries.jsonl`, `judgments.jsonl`,
//! `engagement.jsonl`).

mod synth;

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use synth::{
    default_failure_mix, default_segment_mix, generate_synthetic, SegmentShare, SyntheticData,
    SyntheticSpec,
};

/// Where a result sends the user: to a group they already belong to
/// (connected navigation) or to one they may join (unconnected navigation).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SourceType {
    #[serde(rename = "CN")]
    Connected,
    #[serde(rename = "UN")]
    Unconnected,
}

impl SourceType {
    pub const ALL: [SourceType; 2] = [SourceType::Connected, SourceType::Unconnected];

    pub fn code(self) -> &'static str {
        match self {
            SourceType::Connected => "CN",
            SourceType::Unconnected => "UN",
        }
    }
}

impl fmt::Display for SourceType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for SourceType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "CN" | "cn" => Ok(SourceType::Connected),
            "UN" | "un" => Ok(SourceType::Unconnected),
            _ => Err(Error::InvalidArgument(format!("unknown source type {s:?}"))),
        }
    }
}

/// Query intent. Unrecognized intents deserialize as `Other`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Intent {
    PersonName,
    GroupTopic,
    CelebrityConnected,
    FriendPhoto,
    #[serde(other)]
    Other,
}

impl Intent {
    pub const ALL: [Intent; 5] = [
        Intent::PersonName,
        Intent::GroupTopic,
        Intent::CelebrityConnected,
        Intent::FriendPhoto,
        Intent::Other,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Intent::PersonName => "PersonName",
            Intent::GroupTopic => "GroupTopic",
            Intent::CelebrityConnected => "CelebrityConnected",
            Intent::FriendPhoto => "FriendPhoto",
            Intent::Other => "Other",
        }
    }
}

impl fmt::Display for Intent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Intent {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(Intent::ALL
            .into_iter()
            .find(|i| i.name() == s)
            .unwrap_or(Intent::Other))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FailureCategory {
    FuzzyTextMatch,
    LocationMismatch,
    LanguageMismatch,
    Misinformation,
    Untrustworthy,
    Offensive,
}

impl FailureCategory {
    pub const ALL: [FailureCategory; 6] = [
        FailureCategory::FuzzyTextMatch,
        FailureCategory::LocationMismatch,
        FailureCategory::LanguageMismatch,
        FailureCategory::Misinformation,
        FailureCategory::Untrustworthy,
        FailureCategory::Offensive,
    ];

    /// Integrity failures are the severe categories; the rest are junkiness.
    pub fn is_integrity(self) -> bool {
        matches!(
            self,
            FailureCategory::Misinformation
                | FailureCategory::Untrustworthy
                | FailureCategory::Offensive
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            FailureCategory::FuzzyTextMatch => "FuzzyTextMatch",
            FailureCategory::LocationMismatch => "LocationMismatch",
            FailureCategory::LanguageMismatch => "LanguageMismatch",
            FailureCategory::Misinformation => "Misinformation",
            FailureCategory::Untrustworthy => "Untrustworthy",
            FailureCategory::Offensive => "Offensive",
        }
    }
}

impl fmt::Display for FailureCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Severity {
    /// Must never be returned; deleted from the index.
    Removable,
    /// Borderline; pushed below every non-demoted result.
    Demotable,
}

impl FromStr for Severity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Removable" => Ok(Severity::Removable),
            "Demotable" => Ok(Severity::Demotable),
            _ => Err(Error::InvalidArgument(format!("unknown severity {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IntegrityReason {
    Misinformation,
    Untrustworthy,
    Offensive,
    Other,
}

impl FromStr for IntegrityReason {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Misinformation" => Ok(IntegrityReason::Misinformation),
            "Untrustworthy" => Ok(IntegrityReason::Untrustworthy),
            "Offensive" => Ok(IntegrityReason::Offensive),
            "Other" => Ok(IntegrityReason::Other),
            _ => Err(Error::InvalidArgument(format!("unknown reason {s:?}"))),
        }
    }
}

/// Ground-truth integrity label for one document.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntegrityLabel {
    pub doc_id: String,
    pub severity: Severity,
    pub reason: IntegrityReason,
    /// Logical write time; later writes win.
    #[serde(default)]
    pub ts: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub description: String,
    pub language: String,
    pub country: String,
    pub region: String,
    pub topic: String,
    pub source_type: SourceType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integrity_label: Option<IntegrityLabel>,
}

fn all_sources() -> Vec<SourceType> {
    SourceType::ALL.to_vec()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub query_id: String,
    pub text: String,
    pub language: String,
    pub country: String,
    pub region: String,
    pub intent: Intent,
    /// Result source types the request is served from. Absent means both.
    #[serde(default = "all_sources")]
    pub sources: Vec<SourceType>,
}

impl Query {
    pub fn segment(&self, source_type: SourceType) -> SegmentKey {
        SegmentKey {
            user_country: self.country.clone(),
            language: self.language.clone(),
            query_intent: self.intent,
            doc_source_type: source_type,
        }
    }
}

/// The bucket over which discard thresholds are customized.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SegmentKey {
    pub user_country: String,
    pub language: String,
    pub query_intent: Intent,
    pub doc_source_type: SourceType,
}

impl SegmentKey {
    pub fn new(country: &str, language: &str, intent: Intent, source_type: SourceType) -> Self {
        SegmentKey {
            user_country: country.to_string(),
            language: language.to_string(),
            query_intent: intent,
            doc_source_type: source_type,
        }
    }
}

impl fmt::Display for SegmentKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}/{}",
            self.user_country, self.language, self.query_intent, self.doc_source_type
        )
    }
}

/// Parses the `country/language/intent/source` form produced by `Display`.
impl FromStr for SegmentKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('/').collect();
        let [country, language, intent, source] = parts.as_slice() else {
            return Err(Error::InvalidArgument(format!(
                "segment {s:?} is not country/language/intent/source"
            )));
        };
        let intent: Intent = intent.parse().unwrap_or(Intent::Other);
        Ok(SegmentKey::new(country, language, intent, source.parse()?))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Click,
    Join,
    None,
}

/// One logged impression collected while no discarding was applied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngagementRecord {
    pub query_id: String,
    pub doc_id: String,
    pub raw_score: f64,
    pub engaged: bool,
    pub action: Action,
    pub segment: SegmentKey,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelevanceJudgment {
    pub query_id: String,
    pub doc_id: String,
    /// 0 = failure, 3 = perfect.
    pub grade: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_category: Option<FailureCategory>,
}

/// Per-record checks applied on load.
pub trait Validate {
    fn validate(&self) -> std::result::Result<(), String>;
}

impl Validate for Document {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.doc_id.is_empty() {
            return Err("empty doc_id".into());
        }
        Ok(())
    }
}

impl Validate for Query {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.query_id.is_empty() {
            return Err("empty query_id".into());
        }
        Ok(())
    }
}

impl Validate for EngagementRecord {
    fn validate(&self) -> std::result::Result<(), String> {
        if !(-1.0..=1.0).contains(&self.raw_score) {
            return Err(format!("raw_score {} outside [-1, 1]", self.raw_score));
        }
        if self.engaged != (self.action != Action::None) {
            return Err("engaged must be true exactly when action is not None".into());
        }
        Ok(())
    }
}

impl Validate for RelevanceJudgment {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.grade > 3 {
            return Err(format!("grade {} outside 0..=3", self.grade));
        }
        if self.grade > 0 && self.failure_category.is_some() {
            return Err("failure_category is only allowed on grade 0".into());
        }
        Ok(())
    }
}

impl Validate for IntegrityLabel {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.doc_id.is_empty() {
            return Err("empty doc_id".into());
        }
        Ok(())
    }
}

/// Reads one JSON record per line. Blank lines are skipped.
pub fn read_jsonl<T: DeserializeOwned + Validate>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
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
        let record: T = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        record.validate().map_err(malformed)?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn ensure_unique<'a>(ids: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::DuplicateId(id.to_string()));
        }
    }
    Ok(())
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    let docs: Vec<Document> = read_jsonl(path)?;
    ensure_unique(docs.iter().map(|d| d.doc_id.as_str()))?;
    Ok(docs)
}

pub fn load_queries(path: impl AsRef<Path>) -> Result<Vec<Query>> {
    let queries: Vec<Query> = read_jsonl(path)?;
    ensure_unique(queries.iter().map(|q| q.query_id.as_str()))?;
    Ok(queries)
}

pub fn load_judgments(path: impl AsRef<Path>) -> Result<Vec<RelevanceJudgment>> {
    read_jsonl(path)
}

pub fn load_engagement(path: impl AsRef<Path>) -> Result<Vec<EngagementRecord>> {
    read_jsonl(path)
}
