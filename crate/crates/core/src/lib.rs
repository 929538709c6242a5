//! Failure handling for embedding-based retrieval (EBR).
//!
//! The crate covers the post-training guardrails around a two-tower retriever:
//! sigmoid score calibration, discard thresholds customized per segment and
//! fit from engagement logs, intent-based trigger control with a text
//! retrieval fallback, integrity removal and demotion, and an offline
//! NDCG/NONREC evaluation harness. A seeded synthetic generator produces
//! corpora with planted failure categories for desk-scale experiments.

pub mod corpus;
pub mod embed;
pub mod error;
pub mod eval;
pub mod index;
pub mod integrity;
pub mod linalg;
pub mod pipeline;
pub mod text;
pub mod threshold;
pub mod trigger;

pub use corpus::{
    generate_synthetic, load_corpus, load_engagement, load_judgments, load_queries, Action,
    Document, EngagementRecord, FailureCategory, IntegrityLabel, IntegrityReason, Intent, Query,
    RelevanceJudgment, SegmentKey, SegmentShare, Severity, SourceType, SyntheticData,
    SyntheticSpec,
};
pub use embed::{embed_document, embed_text, Embedding, Tower, DEFAULT_DIM};
pub use error::{Error, Result};
pub use eval::{
    compare_runs, evaluate_run, ndcg_at_k, nonrec_at_10, Delta, DeltaReport, EvalReport,
    EvalSession,
};
pub use index::{cosine, Candidate, Source, VectorIndex};
pub use integrity::{IntegrityStore, SeverityPolicy};
pub use pipeline::{
    sigmoid_transform, DiscardPolicy, PageResult, ResultPage, RetrieveConfig, Retriever,
    SigmoidParams,
};
pub use text::InvertedIndex;
pub use threshold::{fit, segment_targets, FitReport, TargetOptions, ThresholdModel};
pub use trigger::{TriggerAction, TriggerRule, TriggerRules};
