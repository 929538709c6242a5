//! Session-level offline metrics.
//!
//! NDCG uses exponential gain `2^grade - 1` with a `log2(rank + 1)` discount;
//! the ideal ranking is drawn from every judged document of the query, not
//! only the retrieved ones, so discarding relevant results is penalized.
//! A session is NONREC (not recommendable) when any of its top ten results
//! carries an integrity failure category.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::{FailureCategory, RelevanceJudgment};
use crate::error::{Error, Result};
use crate::pipeline::ResultPage;

pub const NDCG_CUTOFFS: [usize; 3] = [1, 3, 5];
pub const NONREC_DEPTH: usize = 10;
pub const BOOTSTRAP_RESAMPLES: usize = 10_000;
pub const BOOTSTRAP_SEED: u64 = 0x5eed;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSession {
    pub query_id: String,
    pub ranked: Vec<String>,
    /// Judged pool of the query; unjudged documents count as grade 0.
    pub grades: HashMap<String, u8>,
    pub categories: HashMap<String, FailureCategory>,
}

impl EvalSession {
    pub fn new<'a>(
        query_id: &str,
        ranked: Vec<String>,
        judgments: impl IntoIterator<Item = &'a RelevanceJudgment>,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        if let Some(dup) = ranked.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::InvalidArgument(format!(
                "session {query_id}: {dup} ranked twice"
            )));
        }
        let mut grades = HashMap::new();
        let mut categories = HashMap::new();
        for j in judgments {
            grades.insert(j.doc_id.clone(), j.grade);
            if let Some(c) = j.failure_category {
                categories.insert(j.doc_id.clone(), c);
            }
        }
        Ok(EvalSession {
            query_id: query_id.to_string(),
            ranked,
            grades,
            categories,
        })
    }

    pub fn grade(&self, doc_id: &str) -> u8 {
        self.grades.get(doc_id).copied().unwrap_or(0)
    }
}

fn gain(grade: u8) -> f64 {
    2f64.powi(grade as i32) - 1.0
}

/// DCG of `grades` in the given order, truncated at `k`.
pub fn dcg(grades: impl IntoIterator<Item = u8>, k: usize) -> f64 {
    grades
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(i, g)| gain(g) / ((i + 2) as f64).log2())
        .sum()
}

pub fn ndcg_at_k(session: &EvalSession, k: usize) -> f64 {
    let mut ideal: Vec<u8> = session.grades.values().copied().collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg(ideal, k);
    if idcg == 0.0 {
        return 0.0;
    }
    let actual = dcg(session.ranked.iter().map(|id| session.grade(id)), k);
    actual / idcg
}

pub fn nonrec_at_10(session: &EvalSession) -> bool {
    session
        .ranked
        .iter()
        .take(NONREC_DEPTH)
        .any(|id| session.categories.get(id).is_some_and(|c| c.is_integrity()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionMetrics {
    pub query_id: String,
    pub ndcg_at: BTreeMap<usize, f64>,
    pub nonrec: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ndcg_at: BTreeMap<usize, f64>,
    pub nonrec_rate: f64,
    /// Share of each category among categorized failures in the top ten.
    pub failure_breakdown: BTreeMap<FailureCategory, f64>,
    pub n_sessions: usize,
    /// Per-session values, sorted by query id; used for paired tests.
    #[serde(default)]
    pub sessions: Vec<SessionMetrics>,
}

pub fn session_metrics(session: &EvalSession) -> SessionMetrics {
    SessionMetrics {
        query_id: session.query_id.clone(),
        ndcg_at: NDCG_CUTOFFS
            .iter()
            .map(|&k| (k, ndcg_at_k(session, k)))
            .collect(),
        nonrec: nonrec_at_10(session),
    }
}

/// Aggregates sessions. Sessions are processed in query-id order so the
/// result does not depend on input order.
pub fn evaluate_run(sessions: &[EvalSession]) -> Result<EvalReport> {
    if sessions.is_empty() {
        return Err(Error::EmptySessions);
    }
    let mut ordered: Vec<&EvalSession> = sessions.iter().collect();
    ordered.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    let metrics: Vec<SessionMetrics> = ordered.iter().map(|s| session_metrics(s)).collect();
    let n = metrics.len() as f64;
    let ndcg_at = NDCG_CUTOFFS
        .iter()
        .map(|&k| (k, metrics.iter().map(|m| m.ndcg_at[&k]).sum::<f64>() / n))
        .collect();
    let nonrec_rate = metrics.iter().filter(|m| m.nonrec).count() as f64 / n;

    let mut counts: BTreeMap<FailureCategory, usize> = BTreeMap::new();
    for s in &ordered {
        for id in s.ranked.iter().take(NONREC_DEPTH) {
            if let Some(&c) = s.categories.get(id) {
                *counts.entry(c).or_default() += 1;
            }
        }
    }
    let total: usize = counts.values().sum();
    let failure_breakdown = counts
        .into_iter()
        .map(|(c, n)| (c, n as f64 / total as f64))
        .collect();
    Ok(EvalReport {
        ndcg_at,
        nonrec_rate,
        failure_breakdown,
        n_sessions: metrics.len(),
        sessions: metrics,
    })
}

/// Pairs each result page with the judgments of its query.
pub fn build_sessions(
    pages: &[ResultPage],
    judgments: &[RelevanceJudgment],
) -> Result<Vec<EvalSession>> {
    let mut by_query: HashMap<&str, Vec<&RelevanceJudgment>> = HashMap::new();
    for j in judgments {
        by_query.entry(j.query_id.as_str()).or_default().push(j);
    }
    pages
        .iter()
        .map(|p| {
            let pool = by_query
                .get(p.query_id.as_str())
                .map_or(&[][..], Vec::as_slice);
            EvalSession::new(&p.query_id, p.doc_ids(), pool.iter().copied())
        })
        .collect()
}

impl EvalReport {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self).expect("report serializes");
        fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::MalformedRecord {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    /// Plain-text summary.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "sessions   {}", self.n_sessions);
        for (k, v) in &self.ndcg_at {
            let _ = writeln!(out, "NDCG@{k:<5} {v:.5}");
        }
        let _ = writeln!(out, "NONREC     {:.5}", self.nonrec_rate);
        if !self.failure_breakdown.is_empty() {
            let _ = writeln!(out, "failure breakdown (top {NONREC_DEPTH}):");
            for (c, f) in &self.failure_breakdown {
                let _ = writeln!(out, "  {:<18} {:>6.2}%", c.name(), 100.0 * f);
            }
        }
        out
    }
}

/// Relative change in percent, or undefined when the control is zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Delta {
    Percent(f64),
    Undefined,
}

impl Delta {
    pub fn between(control: f64, test: f64) -> Self {
        if control == 0.0 {
            Delta::Undefined
        } else {
            Delta::Percent(100.0 * (test - control) / control)
        }
    }

    pub fn percent(self) -> Option<f64> {
        match self {
            Delta::Percent(p) => Some(p),
            Delta::Undefined => None,
        }
    }
}

impl fmt::Display for Delta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Delta::Percent(p) => write!(f, "{p:+.3}%"),
            Delta::Undefined => f.write_str("undefined"),
        }
    }
}

impl Serialize for Delta {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Delta::Percent(p) => s.serialize_f64(*p),
            Delta::Undefined => s.serialize_str("undefined"),
        }
    }
}

impl<'de> Deserialize<'de> for Delta {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Wire {
            Number(f64),
            Text(String),
        }
        match Wire::deserialize(d)? {
            Wire::Number(p) => Ok(Delta::Percent(p)),
            Wire::Text(t) if t == "undefined" => Ok(Delta::Undefined),
            Wire::Text(t) => Err(serde::de::Error::custom(format!("bad delta {t:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bootstrap {
    pub mean_diff: f64,
    /// Two-sided p-value for a zero mean difference.
    pub p_value: f64,
}

/// Paired bootstrap over sessions of `test - control`.
pub fn paired_bootstrap(control: &[f64], test: &[f64], resamples: usize, seed: u64) -> Bootstrap {
    assert_eq!(control.len(), test.len(), "paired samples must align");
    let diffs: Vec<f64> = test.iter().zip(control).map(|(t, c)| t - c).collect();
    let n = diffs.len();
    if n == 0 {
        return Bootstrap {
            mean_diff: 0.0,
            p_value: 1.0,
        };
    }
    let mean_diff = diffs.iter().sum::<f64>() / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut at_or_below, mut at_or_above) = (0usize, 0usize);
    for _ in 0..resamples {
        let m = (0..n).map(|_| diffs[rng.random_range(0..n)]).sum::<f64>() / n as f64;
        if m <= 0.0 {
            at_or_below += 1;
        }
        if m >= 0.0 {
            at_or_above += 1;
        }
    }
    let tail = at_or_below.min(at_or_above);
    let p_value = (2.0 * (tail as f64 + 1.0) / (resamples as f64 + 1.0)).min(1.0);
    Bootstrap { mean_diff, p_value }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub ndcg_at: BTreeMap<usize, Delta>,
    pub nonrec: Delta,
    /// Paired-bootstrap results keyed by metric name (`ndcg@1`, ..., `nonrec`);
    /// empty when the reports do not cover the same sessions.
    #[serde(default)]
    pub significance: BTreeMap<String, Bootstrap>,
}

fn aligned(control: &EvalReport, test: &EvalReport) -> Option<Vec<(usize, usize)>> {
    if control.sessions.is_empty() || control.sessions.len() != test.sessions.len() {
        return None;
    }
    let index: HashMap<&str, usize> = test
        .sessions
        .iter()
        .enumerate()
        .map(|(i, s)| (s.query_id.as_str(), i))
        .collect();
    control
        .sessions
        .iter()
        .enumerate()
        .map(|(i, s)| index.get(s.query_id.as_str()).map(|&j| (i, j)))
        .collect()
}

pub fn compare_runs(control: &EvalReport, test: &EvalReport) -> DeltaReport {
    let ndcg_at = control
        .ndcg_at
        .iter()
        .map(|(k, c)| {
            (
                *k,
                Delta::between(*c, test.ndcg_at.get(k).copied().unwrap_or(0.0)),
            )
        })
        .collect();
    let nonrec = Delta::between(control.nonrec_rate, test.nonrec_rate);
    let mut significance = BTreeMap::new();
    if let Some(pairs) = aligned(control, test) {
        let series = |f: &dyn Fn(&SessionMetrics) -> f64| -> (Vec<f64>, Vec<f64>) {
            pairs
                .iter()
                .map(|&(i, j)| (f(&control.sessions[i]), f(&test.sessions[j])))
                .unzip()
        };
        for &k in control.ndcg_at.keys() {
            let (c, t) = series(&|m| m.ndcg_at.get(&k).copied().unwrap_or(0.0));
            significance.insert(
                format!("ndcg@{k}"),
                paired_bootstrap(&c, &t, BOOTSTRAP_RESAMPLES, BOOTSTRAP_SEED),
            );
        }
        let (c, t) = series(&|m| if m.nonrec { 1.0 } else { 0.0 });
        significance.insert(
            "nonrec".into(),
            paired_bootstrap(&c, &t, BOOTSTRAP_RESAMPLES, BOOTSTRAP_SEED),
        );
    }
    DeltaReport {
        ndcg_at,
        nonrec,
        significance,
    }
}

/// Control-vs-test table, one row per treatment. `*` marks p < 0.05.
pub fn render_delta_table(rows: &[(&str, &DeltaReport)]) -> String {
    let width = rows.iter().map(|(m, _)| m.len()).max().unwrap_or(6).max(6);
    let mut out = String::new();
    let _ = write!(out, "{:<width$}", "Method");
    for k in NDCG_CUTOFFS {
        let _ = write!(out, " | {:>12}", format!("Δ NDCG@{k}"));
    }
    let _ = writeln!(out, " | {:>12}", "Δ NONREC");
    let _ = writeln!(out, "{}", "-".repeat(width + 4 * 15));
    for (method, d) in rows {
        let cell = |delta: Option<&Delta>, key: &str| {
            let star = d.significance.get(key).is_some_and(|b| b.p_value < 0.05);
            match delta {
                Some(delta) => format!("{delta}{}", if star { "*" } else { "" }),
                None => "-".into(),
            }
        };
        let _ = write!(out, "{method:<width$}");
        for k in NDCG_CUTOFFS {
            let _ = write!(
                out,
                " | {:>12}",
                cell(d.ndcg_at.get(&k), &format!("ndcg@{k}"))
            );
        }
        let _ = writeln!(out, " | {:>12}", cell(Some(&d.nonrec), "nonrec"));
    }
    out
}
