//! Static rules deciding whether EBR fires for a (query intent, source type)
//! pair, and the per-segment score diagnostic used to justify them.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{
    read_jsonl, write_jsonl, EngagementRecord, Intent, Query, SegmentKey, SourceType, Validate,
};
use crate::error::{Error, Result};
use crate::threshold::{percentile_target, validate_p, TargetOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TriggerAction {
    Enable,
    Disable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriggerRule {
    pub intent: Intent,
    pub source_type: SourceType,
    /// Restricts the rule to queries from one country.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub country: Option<String>,
    pub action: TriggerAction,
    #[serde(default)]
    pub note: String,
}

impl Validate for TriggerRule {
    fn validate(&self) -> std::result::Result<(), String> {
        Ok(())
    }
}

impl TriggerRule {
    pub fn new(intent: Intent, source_type: SourceType, action: TriggerAction, note: &str) -> Self {
        TriggerRule {
            intent,
            source_type,
            country: None,
            action,
            note: note.to_string(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriggerRules {
    rules: Vec<TriggerRule>,
}

impl TriggerRules {
    /// Fails with `DuplicateRule` when two rules share intent, source type
    /// and country.
    pub fn new(rules: Vec<TriggerRule>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for r in &rules {
            if !seen.insert((r.intent, r.source_type, r.country.clone())) {
                let scope = match &r.country {
                    Some(c) => format!("({}, {}, {c})", r.intent, r.source_type),
                    None => format!("({}, {})", r.intent, r.source_type),
                };
                return Err(Error::DuplicateRule(scope));
            }
        }
        Ok(TriggerRules { rules })
    }

    /// Person-name queries skip unconnected EBR, connected celebrity lookups
    /// skip connected EBR, and friend-photo queries never use group EBR.
    pub fn default_rules() -> Self {
        use SourceType::{Connected, Unconnected};
        use TriggerAction::Disable;
        TriggerRules::new(vec![
            TriggerRule::new(
                Intent::PersonName,
                Unconnected,
                Disable,
                "person-name queries: EBR returns fuzzy name matches",
            ),
            TriggerRule::new(
                Intent::CelebrityConnected,
                Connected,
                Disable,
                "directly connected celebrity lookup is an exact-match task",
            ),
            TriggerRule::new(
                Intent::FriendPhoto,
                Connected,
                Disable,
                "result type mismatch: photo intent",
            ),
            TriggerRule::new(
                Intent::FriendPhoto,
                Unconnected,
                Disable,
                "result type mismatch: photo intent",
            ),
        ])
        .expect("default rules are unique")
    }

    pub fn rules(&self) -> &[TriggerRule] {
        &self.rules
    }

    /// Action for the pair, ignoring country-scoped rules. Enable when no
    /// rule matches.
    pub fn evaluate(&self, intent: Intent, source_type: SourceType) -> TriggerAction {
        self.evaluate_in(intent, source_type, None)
    }

    /// Country-scoped rules take precedence over general ones.
    pub fn evaluate_in(
        &self,
        intent: Intent,
        source_type: SourceType,
        country: Option<&str>,
    ) -> TriggerAction {
        let pair = |r: &&TriggerRule| r.intent == intent && r.source_type == source_type;
        let scoped = country.and_then(|c| {
            self.rules
                .iter()
                .filter(pair)
                .find(|r| r.country.as_deref() == Some(c))
        });
        scoped
            .or_else(|| self.rules.iter().filter(pair).find(|r| r.country.is_none()))
            .map_or(TriggerAction::Enable, |r| r.action)
    }

    pub fn evaluate_query(&self, query: &Query, source_type: SourceType) -> TriggerAction {
        self.evaluate_in(query.intent, source_type, Some(&query.country))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        TriggerRules::new(read_jsonl(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_jsonl(path, &self.rules)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub segment: SegmentKey,
    pub total_count: usize,
    pub engaged_count: usize,
    pub engaged_rate: f64,
    /// `(q, value)` nearest-rank quantiles of the engaged scores.
    pub score_quantiles: Vec<(f64, f64)>,
    /// `(p, y_p)` pairs, same convention as segment targets.
    pub y_ip: Vec<(f64, f64)>,
}

pub const REPORT_QUANTILES: [f64; 7] = [0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0];

fn nearest_rank(sorted_asc: &[f64], q: f64) -> f64 {
    let n = sorted_asc.len();
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted_asc[rank - 1]
}

/// Summarizes one segment's engaged-score distribution. Scores are taken
/// in the space chosen by `opts` (its `min_support` is not applied).
pub fn diagnose_segment(
    log: &[EngagementRecord],
    segment: &SegmentKey,
    p_grid: &[f64],
    opts: &TargetOptions,
) -> Result<DiagnosticReport> {
    for &p in p_grid {
        validate_p(p)?;
    }
    let in_segment: Vec<&EngagementRecord> = log.iter().filter(|r| &r.segment == segment).collect();
    let mut engaged: Vec<f64> = in_segment
        .iter()
        .filter(|r| r.engaged)
        .map(|r| opts.score(r.raw_score))
        .collect();
    engaged.sort_by(f64::total_cmp);
    let engaged_rate = if in_segment.is_empty() {
        0.0
    } else {
        engaged.len() as f64 / in_segment.len() as f64
    };
    let (score_quantiles, y_ip) = if engaged.is_empty() {
        (Vec::new(), Vec::new())
    } else {
        (
            REPORT_QUANTILES
                .iter()
                .map(|&q| (q, nearest_rank(&engaged, q)))
                .collect(),
            p_grid
                .iter()
                .filter_map(|&p| percentile_target(&engaged, p).map(|y| (p, y)))
                .collect(),
        )
    };
    Ok(DiagnosticReport {
        segment: segment.clone(),
        total_count: in_segment.len(),
        engaged_count: engaged.len(),
        engaged_rate,
        score_quantiles,
        y_ip,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Action;

    fn rec(seg: &SegmentKey, score: f64, engaged: bool) -> EngagementRecord {
        EngagementRecord {
            query_id: "q".into(),
            doc_id: "d".into(),
            raw_score: score,
            engaged,
            action: if engaged { Action::Click } else { Action::None },
            segment: seg.clone(),
        }
    }

    const RAW: TargetOptions = TargetOptions {
        min_support: 1,
        calibration: None,
    };

    #[test]
    fn default_rule_examples() {
        let rules = TriggerRules::default_rules();
        assert_eq!(
            rules.evaluate(Intent::PersonName, SourceType::Unconnected),
            TriggerAction::Disable
        );
        assert_eq!(
            rules.evaluate(Intent::GroupTopic, SourceType::Connected),
            TriggerAction::Enable
        );
        assert_eq!(
            rules.evaluate(Intent::CelebrityConnected, SourceType::Connected),
            TriggerAction::Disable
        );
    }

    #[test]
    fn duplicate_rules_rejected() {
        let r = TriggerRule::new(
            Intent::PersonName,
            SourceType::Unconnected,
            TriggerAction::Disable,
            "",
        );
        assert!(matches!(
            TriggerRules::new(vec![r.clone(), r.clone()]),
            Err(Error::DuplicateRule(_))
        ));
        let mut us = r.clone();
        us.country = Some("US".into());
        assert!(TriggerRules::new(vec![r, us]).is_ok());
    }

    #[test]
    fn country_scoped_rule() {
        let mut us_only = TriggerRule::new(
            Intent::GroupTopic,
            SourceType::Unconnected,
            TriggerAction::Disable,
            "US queries only",
        );
        us_only.country = Some("US".into());
        let rules = TriggerRules::new(vec![us_only]).unwrap();
        let a = TriggerAction::Disable;
        assert_eq!(
            rules.evaluate_in(Intent::GroupTopic, SourceType::Unconnected, Some("US")),
            a
        );
        assert_eq!(
            rules.evaluate_in(Intent::GroupTopic, SourceType::Unconnected, Some("BR")),
            TriggerAction::Enable
        );
        assert_eq!(
            rules.evaluate(Intent::GroupTopic, SourceType::Unconnected),
            TriggerAction::Enable
        );
    }

    #[test]
    fn rules_file_round_trip() {
        let f = tempfile::NamedTempFile::new().unwrap();
        let rules = TriggerRules::default_rules();
        rules.save(f.path()).unwrap();
        assert_eq!(TriggerRules::load(f.path()).unwrap(), rules);
    }

    #[test]
    fn diagnose_without_engagement() {
        let seg = SegmentKey::new("US", "en", Intent::PersonName, SourceType::Unconnected);
        let log = vec![rec(&seg, 0.4, false)];
        let d = diagnose_segment(&log, &seg, &[0.9], &RAW).unwrap();
        assert_eq!(d.engaged_count, 0);
        assert_eq!(d.total_count, 1);
        assert!(d.score_quantiles.is_empty());
        assert!(d.y_ip.is_empty());
    }

    #[test]
    fn diagnose_low_scores() {
        let seg = SegmentKey::new("US", "en", Intent::PersonName, SourceType::Unconnected);
        let log: Vec<_> = [0.05, 0.1, 0.12, 0.2, 0.25, 0.29]
            .iter()
            .map(|&s| rec(&seg, s, true))
            .collect();
        let d = diagnose_segment(&log, &seg, &[0.9, 1.0], &RAW).unwrap();
        assert!(d.y_ip[0].1 < 0.3);
        assert_eq!(d.y_ip[1], (1.0, 0.05));
        assert_eq!(d.engaged_rate, 1.0);
        assert_eq!(d.score_quantiles.first(), Some(&(0.0, 0.05)));
        assert_eq!(d.score_quantiles.last(), Some(&(1.0, 0.29)));
    }
}
