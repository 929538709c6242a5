use std::collections::BTreeMap;

use ebr_guard::corpus::{load_corpus, load_judgments, load_queries, read_jsonl, write_jsonl};
use ebr_guard::eval::SessionMetrics;
use ebr_guard::index::Source;
use ebr_guard::threshold::percentile_target;
use ebr_guard::*;
use proptest::prelude::*;

fn unit_vector(dim: usize) -> impl Strategy<Value = Embedding> {
    prop::collection::vec(-1.0f64..1.0, dim)
        .prop_filter("non-zero", |v| v.iter().any(|x| x.abs() > 1e-6))
        .prop_map(|v| Embedding::from_raw(v).unwrap())
}

fn session() -> impl Strategy<Value = (Vec<u8>, Vec<usize>)> {
    prop::collection::vec(0u8..=3, 1..12).prop_flat_map(|grades| {
        let n = grades.len();
        (
            Just(grades),
            Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
        )
    })
}

fn eval_session(id: &str, grades: &[u8], order: &[usize]) -> EvalSession {
    let pool: Vec<RelevanceJudgment> = grades
        .iter()
        .enumerate()
        .map(|(i, &g)| RelevanceJudgment {
            query_id: id.into(),
            doc_id: format!("d{i}"),
            grade: g,
            failure_category: None,
        })
        .collect();
    EvalSession::new(id, order.iter().map(|i| format!("d{i}")).collect(), &pool).unwrap()
}

proptest! {
    #[test]
    fn cosine_is_symmetric_and_bounded(u in unit_vector(16), v in unit_vector(16)) {
        let a = cosine(&u, &v).unwrap();
        prop_assert_eq!(a, cosine(&v, &u).unwrap());
        prop_assert!((-1.0..=1.0).contains(&a));
        prop_assert!((cosine(&u, &u).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_preserves_order(
        a in 0.01f64..50.0,
        b in -5.0f64..5.0,
        x in -1.0f64..1.0,
        y in -1.0f64..1.0,
    ) {
        let p = SigmoidParams::new(a, b).unwrap();
        let (gx, gy) = (sigmoid_transform(x, p), sigmoid_transform(y, p));
        prop_assert!((0.0..=1.0).contains(&gx));
        if x <= y {
            prop_assert!(gx <= gy);
        } else {
            prop_assert!(gx >= gy);
        }
    }

    #[test]
    fn percentile_target_is_tight(
        scores in prop::collection::vec((0u8..40).prop_map(|s| s as f64 / 40.0), 1..80),
        p in 0.01f64..=1.0,
    ) {
        let y = percentile_target(&scores, p).unwrap();
        let n = scores.len() as f64;
        let kept = |t: f64| scores.iter().filter(|&&s| s >= t).count() as f64 / n;
        prop_assert!(kept(y) >= p);
        if let Some(next) = scores.iter().copied().filter(|&s| s > y).min_by(f64::total_cmp) {
            prop_assert!(kept(next) < p);
        }
    }

    #[test]
    fn ndcg_is_bounded((grades, order) in session(), k in 1usize..12) {
        let v = ndcg_at_k(&eval_session("q", &grades, &order), k);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
    }

    #[test]
    fn ideal_permutation_scores_one((grades, _) in session(), k in 1usize..12) {
        let mut ideal: Vec<usize> = (0..grades.len()).collect();
        ideal.sort_by(|&a, &b| grades[b].cmp(&grades[a]));
        let v = ndcg_at_k(&eval_session("q", &grades, &ideal), k);
        if grades.iter().any(|&g| g > 0) {
            prop_assert!((v - 1.0).abs() < 1e-12);
        } else {
            prop_assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn run_is_order_invariant(
        sessions in prop::collection::vec(session(), 1..8),
        seed in any::<u64>(),
    ) {
        let built: Vec<EvalSession> = sessions
            .iter()
            .enumerate()
            .map(|(i, (g, o))| eval_session(&format!("q{i}"), g, o))
            .collect();
        let mut shuffled = built.clone();
        let n = shuffled.len();
        shuffled.rotate_left((seed % n as u64) as usize);
        shuffled.reverse();
        prop_assert_eq!(evaluate_run(&built).unwrap(), evaluate_run(&shuffled).unwrap());
    }

    #[test]
    fn demotion_is_a_stable_partition(labels in prop::collection::vec(0u8..3, 0..20)) {
        let mut store = IntegrityStore::new();
        let results: Vec<PageResult> = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                let id = format!("d{i:02}");
                match l {
                    1 => { store.label(&id, Severity::Demotable, IntegrityReason::Other); }
                    2 => { store.label(&id, Severity::Removable, IntegrityReason::Offensive); }
                    _ => {}
                }
                PageResult { doc_id: id, transformed_score: 1.0 - i as f64 / 100.0, source: Source::Ebr, demoted: false }
            })
            .collect();
        let out = store.apply_demotion(results.clone());
        let clean: Vec<&str> = results.iter().zip(&labels).filter(|(_, l)| **l == 0).map(|(r, _)| r.doc_id.as_str()).collect();
        let demoted: Vec<&str> = results.iter().zip(&labels).filter(|(_, l)| **l == 1).map(|(r, _)| r.doc_id.as_str()).collect();
        let got: Vec<&str> = out.iter().map(|r| r.doc_id.as_str()).collect();
        prop_assert_eq!(got, [clean.clone(), demoted].concat());
        prop_assert!(out.iter().enumerate().all(|(i, r)| r.demoted == (i >= clean.len())));
    }
}

#[test]
fn generated_files_round_trip() {
    let data = generate_synthetic(&SyntheticSpec {
        n_docs: 300,
        n_queries: 30,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    data.write_to(dir.path()).unwrap();
    assert_eq!(
        load_corpus(dir.path().join(SyntheticData::CORPUS_FILE)).unwrap(),
        data.corpus
    );
    assert_eq!(
        load_queries(dir.path().join(SyntheticData::QUERIES_FILE)).unwrap(),
        data.queries
    );
    assert_eq!(
        load_judgments(dir.path().join(SyntheticData::JUDGMENTS_FILE)).unwrap(),
        data.judgments
    );
    assert_eq!(
        load_engagement(dir.path().join(SyntheticData::ENGAGEMENT_FILE)).unwrap(),
        data.engagement
    );
}

#[test]
fn index_survives_save_and_load() {
    let data = generate_synthetic(&SyntheticSpec {
        n_docs: 100,
        n_queries: 10,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let embeddings: BTreeMap<String, Embedding> = data
        .corpus
        .iter()
        .map(|d| (d.doc_id.clone(), embed_document(d, DEFAULT_DIM)))
        .collect();
    let mut index = VectorIndex::build(&data.corpus, &embeddings).unwrap();
    index.remove(&data.corpus[3].doc_id);
    let dir = tempfile::tempdir().unwrap();
    index.save(dir.path()).unwrap();
    let loaded = VectorIndex::load(dir.path(), &data.corpus).unwrap();
    let q = embed_text(&data.queries[0].text, Tower::Query, DEFAULT_DIM);
    assert_eq!(
        index.topk(&q, 10, None).unwrap(),
        loaded.topk(&q, 10, None).unwrap()
    );
    assert!(!loaded.contains(&data.corpus[3].doc_id));
}

#[test]
fn report_round_trips_through_json() {
    let s = eval_session("q1", &[3, 0, 2], &[1, 0, 2]);
    let report = evaluate_run(&[s]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    report.save(&path).unwrap();
    let back = EvalReport::load(&path).unwrap();
    assert_eq!(back.n_sessions, 1);
    assert_eq!(back.sessions, report.sessions);
    let _: &[SessionMetrics] = &back.sessions;
}

#[test]
fn jsonl_preserves_order() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("labels.jsonl");
    let labels: Vec<IntegrityLabel> = (0..5)
        .map(|i| IntegrityLabel {
            doc_id: format!("g{i}"),
            severity: Severity::Demotable,
            reason: IntegrityReason::Untrustworthy,
            ts: i,
        })
        .collect();
    write_jsonl(&path, &labels).unwrap();
    assert_eq!(read_jsonl::<IntegrityLabel>(&path).unwrap(), labels);
}
