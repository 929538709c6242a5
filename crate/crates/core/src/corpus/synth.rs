//! Seeded synthetic corpus with planted failure categories.
//!
//! Every document is judged against exactly one home query. Its text is built
//! from pseudo-words so that the embedder cosine to the home query lands near
//! a per-segment target: relevant connected results score high, relevant
//! unconnected results lower, and fuzzy junk sits between them and below.
//! Relevant unconnected documents and fuzzy junk use spelling variants of the
//! query words, so only EBR can reach them.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use super::{
    write_jsonl, Action, Document, EngagementRecord, FailureCategory, IntegrityLabel,
    IntegrityReason, Intent, Query, RelevanceJudgment, SegmentKey, Severity, SourceType,
};
use crate::embed::{embed_text, Embedding, Tower, DEFAULT_DIM, MIN_DIM};
use crate::error::{Error, Result};
use crate::index::cosine;

const MIX_TOLERANCE: f64 = 1e-9;
const MIN_JUDGED_PER_QUERY: usize = 5;
const MAX_FILLER: usize = 48;
const TARGET_SPREAD: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentShare {
    pub segment: SegmentKey,
    pub fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub n_docs: usize,
    pub n_queries: usize,
    pub failure_mix: BTreeMap<FailureCategory, f64>,
    pub segment_mix: Vec<SegmentShare>,
    /// Embedding dimension used to place documents.
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Share of judged documents that are planted failures.
    #[serde(default = "default_failure_rate")]
    pub failure_rate: f64,
}

fn default_dim() -> usize {
    DEFAULT_DIM
}

fn default_failure_rate() -> f64 {
    0.4
}

pub fn default_failure_mix() -> BTreeMap<FailureCategory, f64> {
    use FailureCategory::*;
    [
        (FuzzyTextMatch, 0.53),
        (LocationMismatch, 0.18),
        (LanguageMismatch, 0.04),
        (Misinformation, 0.10),
        (Untrustworthy, 0.10),
        (Offensive, 0.05),
    ]
    .into()
}

pub fn default_segment_mix() -> Vec<SegmentShare> {
    use Intent::*;
    use SourceType::{Connected as CN, Unconnected as UN};
    [
        ("US", "en", GroupTopic, CN, 0.15),
        ("US", "en", GroupTopic, UN, 0.20),
        ("BR", "pt", GroupTopic, CN, 0.10),
        ("BR", "pt", GroupTopic, UN, 0.10),
        ("IN", "en", GroupTopic, UN, 0.10),
        ("IN", "en", GroupTopic, CN, 0.05),
        ("US", "en", PersonName, UN, 0.10),
        ("US", "en", CelebrityConnected, CN, 0.05),
        ("DE", "de", FriendPhoto, UN, 0.05),
        ("US", "en", Other, CN, 0.05),
        ("US", "en", Other, UN, 0.05),
    ]
    .into_iter()
    .map(|(country, lang, intent, st, fraction)| SegmentShare {
        segment: SegmentKey::new(country, lang, intent, st),
        fraction,
    })
    .collect()
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            seed: 7,
            n_docs: 1000,
            n_queries: 100,
            failure_mix: default_failure_mix(),
            segment_mix: default_segment_mix(),
            dim: DEFAULT_DIM,
            failure_rate: default_failure_rate(),
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.n_docs < 10 {
            return bad(format!("n_docs must be at least 10, got {}", self.n_docs));
        }
        if self.n_queries == 0 {
            return bad("n_queries must be at least 1".into());
        }
        if self.n_docs < MIN_JUDGED_PER_QUERY * self.n_queries {
            return bad(format!(
                "n_docs must be at least {MIN_JUDGED_PER_QUERY} per query ({} for {} queries)",
                MIN_JUDGED_PER_QUERY * self.n_queries,
                self.n_queries
            ));
        }
        if self.dim < MIN_DIM {
            return bad(format!("dim must be at least {MIN_DIM}"));
        }
        if !(0.0..=1.0).contains(&self.failure_rate) {
            return bad(format!("failure_rate {} outside [0, 1]", self.failure_rate));
        }
        check_mix("failure_mix", self.failure_mix.values().copied())?;
        check_mix("segment_mix", self.segment_mix.iter().map(|s| s.fraction))?;
        let distinct: BTreeSet<&SegmentKey> = self.segment_mix.iter().map(|s| &s.segment).collect();
        if distinct.len() != self.segment_mix.len() {
            return bad("segment_mix lists a segment twice".into());
        }
        Ok(())
    }
}

fn check_mix(name: &str, fractions: impl Iterator<Item = f64>) -> Result<()> {
    let mut sum = 0.0;
    for f in fractions {
        if !(f >= 0.0 && f.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "{name} has invalid fraction {f}"
            )));
        }
        sum += f;
    }
    if (sum - 1.0).abs() > MIX_TOLERANCE {
        return Err(Error::InvalidSpec(format!(
            "{name} sums to {sum}, expected 1"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub corpus: Vec<Document>,
    pub queries: Vec<Query>,
    pub judgments: Vec<RelevanceJudgment>,
    pub engagement: Vec<EngagementRecord>,
}

impl SyntheticData {
    pub const CORPUS_FILE: &'static str = "corpus.jsonl";
    pub const QUERIES_FILE: &'static str = "queries.jsonl";
    pub const JUDGMENTS_FILE: &'static str = "judgments.jsonl";
    pub const ENGAGEMENT_FILE: &'static str = "engagement.jsonl";

    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_jsonl(dir.join(Self::CORPUS_FILE), &self.corpus)?;
        write_jsonl(dir.join(Self::QUERIES_FILE), &self.queries)?;
        write_jsonl(dir.join(Self::JUDGMENTS_FILE), &self.judgments)?;
        write_jsonl(dir.join(Self::ENGAGEMENT_FILE), &self.engagement)
    }
}

/// Splits `n` by `weights` with the largest-remainder method; every count is
/// within one of its exact share.
fn apportion(n: usize, weights: &[f64]) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| n as f64 * w / total).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let short = n - counts.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        counts[i] += 1;
    }
    counts
}

fn pick_weighted<'a, T>(rng: &mut ChaCha8Rng, items: &'a [(T, f64)]) -> &'a T {
    let total: f64 = items.iter().map(|(_, w)| w).sum();
    let mut u = rng.random::<f64>() * total;
    for (item, w) in items {
        if u < *w {
            return item;
        }
        u -= w;
    }
    &items.last().expect("non-empty choice").0
}

const ONSETS: [&str; 14] = [
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

fn pseudo_word(rng: &mut ChaCha8Rng, syllables: usize) -> String {
    (0..syllables)
        .map(|_| {
            let onset = ONSETS[rng.random_range(0..ONSETS.len())];
            let vowel = VOWELS[rng.random_range(0..VOWELS.len())];
            format!("{onset}{vowel}")
        })
        .collect()
}

/// A misspelling sharing most trigrams with `word`.
fn variant(rng: &mut ChaCha8Rng, word: &str) -> String {
    let mut chars: Vec<char> = word.chars().collect();
    let last = chars.len() - 1;
    let replacement = loop {
        let c = ['x', 'q', 'y', 'w', 'h', 'j'][rng.random_range(0..6)];
        if c != chars[last] {
            break c;
        }
    };
    chars[last] = replacement;
    if rng.random::<bool>() {
        chars.push('s');
    }
    chars.into_iter().collect()
}

fn regions(country: &str) -> &'static [&'static str] {
    match country {
        "US" => &["CA", "NY", "WA", "TX"],
        "BR" => &["SP", "RJ", "MG"],
        "IN" => &["MH", "KA", "DL"],
        "DE" => &["BY", "BE", "HH"],
        _ => &["XX"],
    }
}

/// Mean embedder cosine of a planted document to its home query.
fn target_mean(relevant_profile: bool, st: SourceType, country: &str) -> f64 {
    let base = match (relevant_profile, st) {
        (true, SourceType::Connected) => 0.80,
        (true, SourceType::Unconnected) => 0.50,
        (false, SourceType::Connected) => 0.55,
        (false, SourceType::Unconnected) => 0.22,
    };
    let shift = match country {
        "BR" => -0.05,
        "IN" => 0.05,
        _ => 0.0,
    };
    base + shift
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Role {
    Relevant,
    Failure(FailureCategory),
}

fn integrity_reason(c: FailureCategory) -> Option<IntegrityReason> {
    match c {
        FailureCategory::Misinformation => Some(IntegrityReason::Misinformation),
        FailureCategory::Untrustworthy => Some(IntegrityReason::Untrustworthy),
        FailureCategory::Offensive => Some(IntegrityReason::Offensive),
        _ => None,
    }
}

/// Appends filler words until the cosine to `query` is closest to `target`.
fn place(
    rng: &mut ChaCha8Rng,
    query: &Embedding,
    title: &str,
    target: f64,
    dim: usize,
) -> (String, f64) {
    let mut words: Vec<String> = Vec::new();
    let score = |desc: &str| {
        let emb = embed_text(&format!("{title} {desc}"), Tower::Doc, dim);
        cosine(query, &emb).expect("same dimension")
    };
    let mut best = (String::new(), score(""));
    for _ in 0..MAX_FILLER {
        let syllables = rng.random_range(2..=3);
        words.push(pseudo_word(rng, syllables));
        let desc = words.join(" ");
        let s = score(&desc);
        if (s - target).abs() < (best.1 - target).abs() {
            best = (desc, s);
        }
        if s < target - 0.15 {
            break;
        }
    }
    best
}

/// Builds the corpus, queries, judgments and a no-discard engagement log.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let spread = Beta::new(3.0, 3.0).expect("valid beta parameters");

    // Query attributes follow the (country, language, intent) marginal; the
    // source scope is every source type with mass under that triple.
    let mut triples: BTreeMap<(String, String, Intent), BTreeMap<SourceType, f64>> =
        BTreeMap::new();
    for share in &spec.segment_mix {
        let s = &share.segment;
        *triples
            .entry((s.user_country.clone(), s.language.clone(), s.query_intent))
            .or_default()
            .entry(s.doc_source_type)
            .or_default() += share.fraction;
    }
    let triple_choices: Vec<((String, String, Intent), f64)> = triples
        .iter()
        .map(|(t, by_st)| (t.clone(), by_st.values().sum()))
        .filter(|(_, w)| *w > 0.0)
        .collect();

    let mut queries = Vec::with_capacity(spec.n_queries);
    let mut query_words: Vec<Vec<String>> = Vec::with_capacity(spec.n_queries);
    for qi in 0..spec.n_queries {
        let (country, language, intent) = pick_weighted(&mut rng, &triple_choices).clone();
        let sources: Vec<SourceType> = triples[&(country.clone(), language.clone(), intent)]
            .iter()
            .filter(|(_, w)| **w > 0.0)
            .map(|(st, _)| *st)
            .collect();
        let n_words = rng.random_range(2..=3);
        let words: Vec<String> = (0..n_words)
            .map(|_| {
                let syllables = rng.random_range(3..=4);
                pseudo_word(&mut rng, syllables)
            })
            .collect();
        let region_list = regions(&country);
        let region = region_list[rng.random_range(0..region_list.len())].to_string();
        queries.push(Query {
            query_id: format!("q{qi:05}"),
            text: words.join(" "),
            language,
            country,
            region,
            intent,
            sources,
        });
        query_words.push(words);
    }

    let n_fail = (spec.n_docs as f64 * spec.failure_rate).round() as usize;
    let categories: Vec<FailureCategory> = spec.failure_mix.keys().copied().collect();
    let weights: Vec<f64> = spec.failure_mix.values().copied().collect();
    let mut roles: Vec<Role> = Vec::with_capacity(spec.n_docs);
    for (c, n) in categories.iter().zip(apportion(n_fail, &weights)) {
        roles.extend(std::iter::repeat_n(Role::Failure(*c), n));
    }
    roles.resize(spec.n_docs, Role::Relevant);
    roles.shuffle(&mut rng);

    // Round-robin guarantees the minimum judged pool; the rest is random.
    let homes: Vec<usize> = (0..spec.n_docs)
        .map(|i| {
            if i < MIN_JUDGED_PER_QUERY * spec.n_queries {
                i % spec.n_queries
            } else {
                rng.random_range(0..spec.n_queries)
            }
        })
        .collect();

    let query_embeddings: Vec<Embedding> = queries
        .iter()
        .map(|q| embed_text(&q.text, Tower::Query, spec.dim))
        .collect();
    let countries: BTreeSet<&str> = spec
        .segment_mix
        .iter()
        .map(|s| s.segment.user_country.as_str())
        .chain(["US", "BR", "IN", "DE"])
        .collect();
    let languages: BTreeSet<&str> = spec
        .segment_mix
        .iter()
        .map(|s| s.segment.language.as_str())
        .chain(["en", "pt", "de"])
        .collect();

    let mut corpus = Vec::with_capacity(spec.n_docs);
    let mut judgments = Vec::with_capacity(spec.n_docs);
    let mut engagement = Vec::with_capacity(spec.n_docs);
    for (di, (&role, &home)) in roles.iter().zip(&homes).enumerate() {
        let q = &queries[home];
        let st_choices: Vec<(SourceType, f64)> = triples
            [&(q.country.clone(), q.language.clone(), q.intent)]
            .iter()
            .filter(|(_, w)| **w > 0.0)
            .map(|(st, w)| (*st, *w))
            .collect();
        let st = *pick_weighted(&mut rng, &st_choices);

        let relevant_profile = !matches!(role, Role::Failure(FailureCategory::FuzzyTextMatch));
        let mean = target_mean(relevant_profile, st, &q.country);
        let z = 2.0 * spread.sample(&mut rng) - 1.0;
        let target = (mean + 0.5 * TARGET_SPREAD * z).clamp(0.05, 0.98);

        let exact_words = match role {
            Role::Relevant => st == SourceType::Connected || q.intent == Intent::PersonName,
            Role::Failure(FailureCategory::FuzzyTextMatch) => false,
            Role::Failure(_) => true,
        };
        let title = if exact_words {
            query_words[home].join(" ")
        } else {
            let words: Vec<String> = query_words[home]
                .iter()
                .map(|w| variant(&mut rng, w))
                .collect();
            words.join(" ")
        };
        let (description, raw_score) =
            place(&mut rng, &query_embeddings[home], &title, target, spec.dim);

        let mut country = q.country.clone();
        let mut language = q.language.clone();
        let mut region = q.region.clone();
        match role {
            Role::Failure(FailureCategory::LocationMismatch) => {
                let others: Vec<&&str> = countries.iter().filter(|c| **c != q.country).collect();
                country = others[rng.random_range(0..others.len())].to_string();
                let list = regions(&country);
                region = list[rng.random_range(0..list.len())].to_string();
            }
            Role::Failure(FailureCategory::LanguageMismatch) => {
                let others: Vec<&&str> = languages.iter().filter(|l| **l != q.language).collect();
                language = others[rng.random_range(0..others.len())].to_string();
            }
            _ => {}
        }

        let doc_id = format!("g{di:06}");
        let (grade, failure_category) = match role {
            Role::Relevant => {
                let grade = if z > 1.0 / 3.0 {
                    3
                } else if z > -1.0 / 3.0 {
                    2
                } else {
                    1
                };
                (grade, None)
            }
            Role::Failure(c) => (0, Some(c)),
        };
        let integrity_label = failure_category.and_then(integrity_reason).map(|reason| {
            let severity = match reason {
                IntegrityReason::Misinformation | IntegrityReason::Offensive => Severity::Removable,
                _ => Severity::Demotable,
            };
            IntegrityLabel {
                doc_id: doc_id.clone(),
                severity,
                reason,
                ts: 0,
            }
        });

        let p_engage = match role {
            Role::Relevant => 0.3 + 0.2 * grade as f64,
            Role::Failure(FailureCategory::FuzzyTextMatch) => 0.05,
            Role::Failure(FailureCategory::LocationMismatch) => 0.15,
            Role::Failure(FailureCategory::LanguageMismatch) => 0.1,
            Role::Failure(_) => 0.1,
        };
        let engaged = rng.random::<f64>() < p_engage;
        let action = match (engaged, st) {
            (false, _) => Action::None,
            (true, SourceType::Unconnected) if rng.random::<bool>() => Action::Join,
            (true, _) => Action::Click,
        };

        engagement.push(EngagementRecord {
            query_id: q.query_id.clone(),
            doc_id: doc_id.clone(),
            raw_score,
            engaged,
            action,
            segment: q.segment(st),
        });
        judgments.push(RelevanceJudgment {
            query_id: q.query_id.clone(),
            doc_id: doc_id.clone(),
            grade,
            failure_category,
        });
        corpus.push(Document {
            doc_id,
            title,
            description,
            language,
            country,
            region,
            topic: format!("topic-{home:05}"),
            source_type: st,
            integrity_label,
        });
    }

    Ok(SyntheticData {
        corpus,
        queries,
        judgments,
        engagement,
    })
}
