//! Per-segment discard thresholds.
//!
//! Engagement logs collected without discarding are grouped by segment
//! (user country, language, query intent, doc source type). For each segment
//! the target `y_p` is the largest engaged score that still keeps at least a
//! fraction `p` of the engaged results. A linear model over one-hot segment
//! features is then fit to those targets by ordinary least squares, so sparse
//! or unseen segments still get a threshold.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{EngagementRecord, SegmentKey};
use crate::error::{Error, Result};
use crate::linalg::least_squares;
use crate::pipeline::{sigmoid_transform, SigmoidParams};

pub const DEFAULT_P: f64 = 0.9;
pub const DEFAULT_MIN_SUPPORT: usize = 20;
/// Diagonal added to the normal matrix; numerical stabilization only.
pub const JITTER: f64 = 1e-8;

pub fn validate_p(p: f64) -> Result<f64> {
    if p > 0.0 && p <= 1.0 {
        Ok(p)
    } else {
        Err(Error::InvalidP(p))
    }
}

/// Largest observed score `t` with `|{s >= t}| / n >= p`.
///
/// Returns `None` for an empty slice. `p` must already be validated.
pub fn percentile_target(scores: &[f64], p: f64) -> Option<f64> {
    if scores.is_empty() {
        return None;
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let n = sorted.len() as f64;
    // Smallest count m with m / n >= p, compared the same way the retention
    // fraction is measured so that e.g. p = 0.3, n = 10 gives m = 3.
    let mut m = ((p * n).floor() as usize).clamp(1, sorted.len());
    while m > 1 && (m - 1) as f64 / n >= p {
        m -= 1;
    }
    while (m as f64) / n < p && m < sorted.len() {
        m += 1;
    }
    Some(sorted[m - 1])
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TargetOptions {
    /// Segments with fewer engaged records are left to the fitted model.
    pub min_support: usize,
    /// Transform applied to raw scores before taking percentiles. `None`
    /// works on the raw scores directly.
    pub calibration: Option<SigmoidParams>,
}

impl Default for TargetOptions {
    fn default() -> Self {
        TargetOptions {
            min_support: DEFAULT_MIN_SUPPORT,
            calibration: Some(SigmoidParams::default()),
        }
    }
}

impl TargetOptions {
    pub fn score(&self, raw: f64) -> f64 {
        match self.calibration {
            Some(params) => sigmoid_transform(raw, params),
            None => raw,
        }
    }
}

/// Engaged scores per segment, in the score space chosen by `opts`.
pub fn engaged_scores(
    log: &[EngagementRecord],
    opts: &TargetOptions,
) -> BTreeMap<SegmentKey, Vec<f64>> {
    let mut by_segment: BTreeMap<SegmentKey, Vec<f64>> = BTreeMap::new();
    for r in log.iter().filter(|r| r.engaged) {
        by_segment
            .entry(r.segment.clone())
            .or_default()
            .push(opts.score(r.raw_score));
    }
    by_segment
}

pub fn segment_targets(
    log: &[EngagementRecord],
    p: f64,
    opts: &TargetOptions,
) -> Result<BTreeMap<SegmentKey, f64>> {
    if log.is_empty() {
        return Err(Error::EmptyLog);
    }
    let p = validate_p(p)?;
    Ok(engaged_scores(log, opts)
        .into_iter()
        .filter(|(_, scores)| scores.len() >= opts.min_support.max(1))
        .filter_map(|(key, scores)| percentile_target(&scores, p).map(|y| (key, y)))
        .collect())
}

/// One categorical feature block plus its trailing unknown slot.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureBlock {
    pub feature: String,
    pub categories: Vec<String>,
}

impl FeatureBlock {
    fn width(&self) -> usize {
        self.categories.len() + 1
    }

    fn slot(&self, category: &str) -> usize {
        self.categories
            .iter()
            .position(|c| c == category)
            .unwrap_or(self.categories.len())
    }
}

/// Layout of the design vector: position 0 is the intercept, followed by one
/// one-hot block per feature in a fixed order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureEncoding {
    pub blocks: Vec<FeatureBlock>,
}

pub const FEATURES: [&str; 4] = [
    "user_country",
    "language",
    "query_intent",
    "doc_source_type",
];
pub const UNKNOWN: &str = "<unknown>";

fn feature_values(key: &SegmentKey) -> [String; 4] {
    [
        key.user_country.clone(),
        key.language.clone(),
        key.query_intent.name().to_string(),
        key.doc_source_type.code().to_string(),
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

impl FeatureEncoding {
    pub fn from_segments<'a>(segments: impl IntoIterator<Item = &'a SegmentKey>) -> Self {
        let mut seen: [BTreeSet<String>; 4] = Default::default();
        for key in segments {
            for (set, value) in seen.iter_mut().zip(feature_values(key)) {
                set.insert(value);
            }
        }
        FeatureEncoding {
            blocks: FEATURES
                .iter()
                .zip(seen)
                .map(|(f, cats)| FeatureBlock {
                    feature: f.to_string(),
                    categories: cats.into_iter().collect(),
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        1 + self.blocks.iter().map(FeatureBlock::width).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Column of `(feature, category)`; `category` may be [`UNKNOWN`].
    pub fn position(&self, feature: &str, category: &str) -> Option<usize> {
        let mut offset = 1;
        for block in &self.blocks {
            if block.feature == feature {
                return if category == UNKNOWN {
                    Some(offset + block.categories.len())
                } else {
                    block
                        .categories
                        .iter()
                        .position(|c| c == category)
                        .map(|i| offset + i)
                };
            }
            offset += block.width();
        }
        None
    }

    /// Intercept plus one hot per block; unseen categories hit the block's
    /// unknown slot.
    pub fn encode(&self, key: &SegmentKey) -> FeatureVector {
        let mut values = vec![0.0; self.len()];
        values[0] = 1.0;
        let mut offset = 1;
        for (block, value) in self.blocks.iter().zip(feature_values(key)) {
            values[offset + block.slot(&value)] = 1.0;
            offset += block.width();
        }
        FeatureVector { values }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub mse: f64,
    pub max_residual: f64,
    pub n_segments: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdModel {
    pub p: f64,
    pub beta: Vec<f64>,
    pub encoding: FeatureEncoding,
    pub fit_report: FitReport,
    /// Score space the targets were computed in; `None` means raw cosine.
    #[serde(default)]
    pub calibration: Option<SigmoidParams>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Unweighted least-squares fit of `targets` on the one-hot segment design.
pub fn fit(
    targets: &BTreeMap<SegmentKey, f64>,
    p: f64,
    calibration: Option<SigmoidParams>,
) -> Result<ThresholdModel> {
    let p = validate_p(p)?;
    if targets.is_empty() {
        return Err(Error::DegenerateDesign(
            "no segment met the minimum support".into(),
        ));
    }
    let encoding = FeatureEncoding::from_segments(targets.keys());
    let rows: Vec<Vec<f64>> = targets.keys().map(|k| encoding.encode(k).values).collect();
    let y: Vec<f64> = targets.values().copied().collect();
    let beta = least_squares(&rows, &y, JITTER)?;
    let residuals: Vec<f64> = rows
        .iter()
        .zip(&y)
        .map(|(r, t)| dot(r, &beta) - t)
        .collect();
    let fit_report = FitReport {
        mse: residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64,
        max_residual: residuals.iter().fold(0.0, |m, r| r.abs().max(m)),
        n_segments: targets.len(),
    };
    Ok(ThresholdModel {
        p,
        beta,
        encoding,
        fit_report,
        calibration,
    })
}

impl ThresholdModel {
    /// Linear prediction without clamping.
    pub fn predict_unclamped(&self, segment: &SegmentKey) -> f64 {
        dot(&self.beta, &self.encoding.encode(segment).values)
    }

    /// Discard threshold for `segment`, clamped to [0, 1].
    pub fn predict_threshold(&self, segment: &SegmentKey) -> f64 {
        self.predict_unclamped(segment).clamp(0.0, 1.0)
    }

    /// Mean squared error of the unclamped predictions against `targets`.
    pub fn mse(&self, targets: &BTreeMap<SegmentKey, f64>) -> f64 {
        let sse: f64 = targets
            .iter()
            .map(|(k, y)| (self.predict_unclamped(k) - y).powi(2))
            .sum();
        sse / targets.len() as f64
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self).expect("model serializes");
        fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: ThresholdModel =
            serde_json::from_str(&text).map_err(|e| Error::MalformedRecord {
                path: path.to_path_buf(),
                line: e.line(),
                message: e.to_string(),
            })?;
        if model.beta.len() != model.encoding.len() || model.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::MalformedRecord {
                path: path.to_path_buf(),
                line: 0,
                message: "beta does not match encoding".into(),
            });
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Action, Intent, SourceType};

    fn key(country: &str, st: SourceType) -> SegmentKey {
        SegmentKey::new(country, "en", Intent::GroupTopic, st)
    }

    fn engaged(seg: &SegmentKey, score: f64) -> EngagementRecord {
        EngagementRecord {
            query_id: "q".into(),
            doc_id: "d".into(),
            raw_score: score,
            engaged: true,
            action: Action::Click,
            segment: seg.clone(),
        }
    }

    const RAW: TargetOptions = TargetOptions {
        min_support: 1,
        calibration: None,
    };

    #[test]
    fn worked_percentile_example() {
        let scores = [0.2, 0.3, 0.35, 0.4, 0.5, 0.6, 0.65, 0.7, 0.85, 1.0];
        assert_eq!(percentile_target(&scores, 0.30), Some(0.7));
    }

    #[test]
    fn full_retention_is_minimum() {
        let scores = [0.4, 0.9, 0.1, 0.5];
        assert_eq!(percentile_target(&scores, 1.0), Some(0.1));
    }

    #[test]
    fn constant_scores() {
        let scores = [0.42; 7];
        for p in [0.01, 0.3, 0.9, 1.0] {
            assert_eq!(percentile_target(&scores, p), Some(0.42));
        }
    }

    #[test]
    fn ties_do_not_break_retention() {
        // p = 0.5 over 4 scores needs 2 kept; the tie at 0.8 keeps 3.
        assert_eq!(percentile_target(&[0.9, 0.8, 0.8, 0.1], 0.5), Some(0.8));
    }

    #[test]
    fn segment_targets_errors_and_support() {
        assert!(matches!(
            segment_targets(&[], 0.9, &RAW),
            Err(Error::EmptyLog)
        ));
        let seg = key("US", SourceType::Connected);
        let log = vec![engaged(&seg, 0.5)];
        for bad in [0.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(
                segment_targets(&log, bad, &RAW),
                Err(Error::InvalidP(_))
            ));
        }
        let strict = TargetOptions {
            min_support: 2,
            calibration: None,
        };
        assert!(segment_targets(&log, 0.9, &strict).unwrap().is_empty());
        assert_eq!(segment_targets(&log, 0.9, &RAW).unwrap()[&seg], 0.5);
    }

    #[test]
    fn non_engaged_records_are_ignored() {
        let seg = key("US", SourceType::Connected);
        let mut log: Vec<_> = [0.5, 0.6].iter().map(|&s| engaged(&seg, s)).collect();
        log.push(EngagementRecord {
            raw_score: -0.9,
            engaged: false,
            action: Action::None,
            ..engaged(&seg, 0.0)
        });
        assert_eq!(segment_targets(&log, 1.0, &RAW).unwrap()[&seg], 0.5);
    }

    #[test]
    fn calibrated_targets_are_sigmoid_of_raw() {
        let seg = key("US", SourceType::Connected);
        let log: Vec<_> = [0.1, 0.4, 0.8].iter().map(|&s| engaged(&seg, s)).collect();
        let opts = TargetOptions {
            min_support: 1,
            calibration: Some(SigmoidParams::default()),
        };
        let y = segment_targets(&log, 1.0, &opts).unwrap()[&seg];
        assert_eq!(y, sigmoid_transform(0.1, SigmoidParams::default()));
    }

    #[test]
    fn encode_known_and_unknown() {
        let a = key("US", SourceType::Unconnected);
        let b = key("BR", SourceType::Connected);
        let enc = FeatureEncoding::from_segments([&a, &b]);
        // 1 + (2+1) + (1+1) + (1+1) + (2+1)
        assert_eq!(enc.len(), 11);
        let v = enc.encode(&a).values;
        assert_eq!(v[0], 1.0);
        assert_eq!(v.iter().sum::<f64>(), 5.0);
        for (f, c) in [
            ("user_country", "US"),
            ("language", "en"),
            ("query_intent", "GroupTopic"),
            ("doc_source_type", "UN"),
        ] {
            assert_eq!(v[enc.position(f, c).unwrap()], 1.0, "{f}={c}");
        }
        assert_ne!(enc.encode(&a), enc.encode(&b));

        let unseen = key("ZZ", SourceType::Unconnected);
        let u = enc.encode(&unseen).values;
        assert_eq!(u[enc.position("user_country", UNKNOWN).unwrap()], 1.0);
        assert_eq!(u.iter().sum::<f64>(), 5.0);
    }

    #[test]
    fn two_segment_interpolation() {
        let a = key("US", SourceType::Connected);
        let b = key("BR", SourceType::Connected);
        let targets: BTreeMap<_, _> = [(a.clone(), 0.4), (b.clone(), 0.6)].into();
        let m = fit(&targets, 0.9, None).unwrap();
        assert!((m.predict_threshold(&a) - 0.4).abs() < 1e-7);
        assert!((m.predict_threshold(&b) - 0.6).abs() < 1e-7);
        assert!(m.fit_report.mse < 1e-12);
        assert_eq!(m.fit_report.n_segments, 2);
    }

    #[test]
    fn constant_targets() {
        let keys = [
            key("US", SourceType::Connected),
            key("BR", SourceType::Unconnected),
            key("IN", SourceType::Connected),
        ];
        let targets: BTreeMap<_, _> = keys.iter().map(|k| (k.clone(), 0.63)).collect();
        let m = fit(&targets, 0.9, None).unwrap();
        for k in &keys {
            assert!((m.predict_threshold(k) - 0.63).abs() < 1e-7);
        }
        assert!(m.fit_report.mse < 1e-14);
    }

    #[test]
    fn single_segment_predicts_itself() {
        let a = key("US", SourceType::Connected);
        let m = fit(&[(a.clone(), 0.55)].into(), 0.9, None).unwrap();
        assert!((m.predict_threshold(&a) - 0.55).abs() < 1e-7);
    }

    #[test]
    fn empty_targets_are_degenerate() {
        assert!(matches!(
            fit(&BTreeMap::new(), 0.9, None),
            Err(Error::DegenerateDesign(_))
        ));
    }

    #[test]
    fn unseen_segment_prediction_is_total() {
        let targets: BTreeMap<_, _> = [
            (key("US", SourceType::Connected), 0.9),
            (key("BR", SourceType::Unconnected), 0.2),
        ]
        .into();
        let m = fit(&targets, 0.9, None).unwrap();
        let t = m.predict_threshold(&SegmentKey::new(
            "ZZ",
            "xx",
            Intent::Other,
            SourceType::Connected,
        ));
        assert!(t.is_finite() && (0.0..=1.0).contains(&t));
    }

    #[test]
    fn prediction_is_dot_product() {
        // Hand-set coefficients; one category per block.
        let a = key("US", SourceType::Connected);
        let enc = FeatureEncoding::from_segments([&a]);
        let beta: Vec<f64> = (0..enc.len()).map(|i| 0.05 * i as f64).collect();
        let m = ThresholdModel {
            p: 0.9,
            beta,
            encoding: enc.clone(),
            fit_report: FitReport {
                mse: 0.0,
                max_residual: 0.0,
                n_segments: 1,
            },
            calibration: None,
        };
        // Active positions for `a`: 0, 1 (US), 3 (en), 5 (GroupTopic), 7 (CN).
        let manual = 0.0 + 0.05 + 0.15 + 0.25 + 0.35;
        assert!((m.predict_unclamped(&a) - manual).abs() < 1e-12);
    }

    #[test]
    fn model_json_round_trip() {
        let targets: BTreeMap<_, _> = [
            (key("US", SourceType::Connected), 0.7),
            (key("BR", SourceType::Unconnected), 0.55),
        ]
        .into();
        let m = fit(&targets, 0.9, Some(SigmoidParams::default())).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        m.save(f.path()).unwrap();
        assert_eq!(ThresholdModel::load(f.path()).unwrap(), m);
        let json: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(f.path()).unwrap()).unwrap();
        for field in ["p", "beta", "encoding", "fit_report"] {
            assert!(json.get(field).is_some(), "{field}");
        }
    }
}
