use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use ebr_guard::corpus::{read_jsonl, write_jsonl};
use ebr_guard::embed::load_embeddings;
use ebr_guard::eval::{build_sessions, render_delta_table};
use ebr_guard::threshold::{validate_p, DEFAULT_MIN_SUPPORT, DEFAULT_P};
use ebr_guard::trigger::diagnose_segment;
use ebr_guard::*;

#[derive(Parser)]
#[command(
    name = "ebr-guard",
    version,
    about = "Guardrails and offline evaluation for embedding-based retrieval"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus, queries, judgments and engagement log.
    GenData(GenData),
    /// Embed the corpus and write a vector index directory.
    BuildIndex(BuildIndex),
    /// Fit per-segment discard thresholds from an engagement log.
    FitThresholds(FitThresholds),
    /// Run the retrieval pipeline over a query file.
    Search(Search),
    /// Append an integrity label to a labels file.
    Label(Label),
    /// Score result pages against relevance judgments.
    Evaluate(Evaluate),
    /// Compare a control report with one or more test reports.
    Compare(Compare),
    /// Summarize the engaged-score distribution of one segment.
    Diagnose(Diagnose),
    /// Write the default trigger rules.
    DefaultRules {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct GenData {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    n_docs: usize,
    #[arg(long, default_value_t = 100)]
    n_queries: usize,
    #[arg(long)]
    failure_rate: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_DIM)]
    dim: usize,
    /// JSON spec whose failure_mix and segment_mix replace the defaults.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BuildIndex {
    #[arg(long)]
    corpus: PathBuf,
    /// Precomputed document vectors; the built-in embedder is used otherwise.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_DIM)]
    dim: usize,
    /// Remove every Removable document listed in this labels file.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Also remove Removable documents labeled in the corpus itself.
    #[arg(long)]
    corpus_labels: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone, Copy)]
struct Sigmoid {
    #[arg(long)]
    sigmoid_a: Option<f64>,
    #[arg(long)]
    sigmoid_b: Option<f64>,
}

impl Sigmoid {
    fn resolve(self, fallback: SigmoidParams) -> Result<SigmoidParams> {
        Ok(SigmoidParams::new(
            self.sigmoid_a.unwrap_or(fallback.a),
            self.sigmoid_b.unwrap_or(fallback.b),
        )?)
    }
}

#[derive(Args)]
struct FitThresholds {
    #[arg(long)]
    log: PathBuf,
    #[arg(long, default_value_t = DEFAULT_P)]
    p: f64,
    #[arg(long, default_value_t = DEFAULT_MIN_SUPPORT)]
    min_support: usize,
    /// Take percentiles over raw cosine scores instead of calibrated ones.
    #[arg(long)]
    raw: bool,
    #[command(flatten)]
    sigmoid: Sigmoid,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Search {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    /// Index directory from build-index; built in memory when absent.
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_DIM)]
    dim: usize,
    /// Trigger rules; the defaults apply when absent.
    #[arg(long)]
    rules: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    corpus_labels: bool,
    /// Threshold model; its calibration is used unless overridden.
    #[arg(long, conflicts_with = "global_threshold")]
    model: Option<PathBuf>,
    #[arg(long)]
    global_threshold: Option<f64>,
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Serve text results only when EBR does not fire.
    #[arg(long)]
    no_text_merge: bool,
    #[command(flatten)]
    sigmoid: Sigmoid,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Label {
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    doc_id: String,
    #[arg(long)]
    severity: Severity,
    #[arg(long)]
    reason: IntegrityReason,
}

#[derive(Args)]
struct Evaluate {
    #[arg(long)]
    results: PathBuf,
    #[arg(long)]
    judgments: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Compare {
    #[arg(long)]
    control: PathBuf,
    /// Test reports, optionally as NAME=PATH.
    #[arg(long = "test", required = true)]
    tests: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Diagnose {
    #[arg(long)]
    log: PathBuf,
    /// Segment as country/language/intent/source, e.g. US/en/PersonName/UN.
    #[arg(long)]
    segment: SegmentKey,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0.5,0.7,0.8,0.9,0.95,1.0"
    )]
    p: Vec<f64>,
    #[arg(long)]
    raw: bool,
    #[command(flatten)]
    sigmoid: Sigmoid,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| io_error(path, e))?;
    Ok(())
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn gen_data(args: GenData) -> Result<()> {
    let mut spec = match &args.spec {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::InvalidSpec(format!("{}: {e}", path.display())))?
        }
        None => SyntheticSpec::default(),
    };
    spec.seed = args.seed;
    spec.n_docs = args.n_docs;
    spec.n_queries = args.n_queries;
    spec.dim = args.dim;
    if let Some(rate) = args.failure_rate {
        spec.failure_rate = rate;
    }
    let data = generate_synthetic(&spec)?;
    data.write_to(&args.out)?;
    write_json(&args.out.join("spec.json"), &spec)?;
    println!(
        "wrote {} documents, {} queries, {} judgments, {} log records to {}",
        data.corpus.len(),
        data.queries.len(),
        data.judgments.len(),
        data.engagement.len(),
        args.out.display()
    );
    Ok(())
}

fn integrity_store(
    labels: Option<&Path>,
    corpus_labels: bool,
    docs: &[Document],
) -> Result<IntegrityStore> {
    let mut store = if corpus_labels {
        IntegrityStore::from_corpus(docs)
    } else {
        IntegrityStore::new()
    };
    if let Some(path) = labels {
        for label in IntegrityStore::load(path)?.labels() {
            store.insert(label.clone());
        }
    }
    Ok(store)
}

fn embed_corpus(docs: &[Document], dim: usize) -> BTreeMap<String, Embedding> {
    docs.iter()
        .map(|d| (d.doc_id.clone(), embed_document(d, dim)))
        .collect()
}

fn build_index(args: BuildIndex) -> Result<()> {
    let docs = load_corpus(&args.corpus)?;
    let embeddings = match &args.embeddings {
        Some(path) => load_embeddings(path)?,
        None => embed_corpus(&docs, args.dim),
    };
    let mut index = VectorIndex::build(&docs, &embeddings)?;
    let store = integrity_store(args.labels.as_deref(), args.corpus_labels, &docs)?;
    let removed = store.apply_index_removal(&mut index);
    index.save(&args.out)?;
    println!(
        "indexed {} documents (dim {}), removed {removed}, in {}",
        index.len(),
        index.dim(),
        args.out.display()
    );
    Ok(())
}

fn fit_thresholds(args: FitThresholds) -> Result<()> {
    let p = validate_p(args.p)?;
    let log = load_engagement(&args.log)?;
    let calibration = if args.raw {
        None
    } else {
        Some(args.sigmoid.resolve(SigmoidParams::default())?)
    };
    let opts = TargetOptions {
        min_support: args.min_support,
        calibration,
    };
    let targets = segment_targets(&log, p, &opts)?;
    let model = fit(&targets, p, calibration)?;
    model.save(&args.out)?;
    println!("{:<40} {:>8} {:>9}", "segment", "target", "predicted");
    for (key, y) in &targets {
        println!(
            "{:<40} {y:>8.4} {:>9.4}",
            key.to_string(),
            model.predict_threshold(key)
        );
    }
    let r = &model.fit_report;
    println!(
        "fit on {} segments: mse {:.3e}, max residual {:.3e}; model written to {}",
        r.n_segments,
        r.mse,
        r.max_residual,
        args.out.display()
    );
    Ok(())
}

fn search(args: Search) -> Result<()> {
    let docs = load_corpus(&args.corpus)?;
    let queries = load_queries(&args.queries)?;
    let mut index = match &args.index {
        Some(dir) => VectorIndex::load(dir, &docs)?,
        None => VectorIndex::build(&docs, &embed_corpus(&docs, args.dim))?,
    };
    let store = integrity_store(args.labels.as_deref(), args.corpus_labels, &docs)?;
    store.apply_index_removal(&mut index);
    let text = InvertedIndex::build(&docs);
    let rules = match &args.rules {
        Some(path) => TriggerRules::load(path)?,
        None => TriggerRules::default_rules(),
    };
    let model = args
        .model
        .as_deref()
        .map(ThresholdModel::load)
        .transpose()?;
    let fallback = model
        .as_ref()
        .and_then(|m| m.calibration)
        .unwrap_or_default();
    let discard = match (&model, args.global_threshold) {
        (Some(m), _) => DiscardPolicy::Segmented(m),
        (None, Some(t)) => DiscardPolicy::Global(t),
        (None, None) => DiscardPolicy::Off,
    };
    if args.k == 0 {
        return Err(Error::InvalidArgument("--k must be at least 1".into()).into());
    }
    let retriever = Retriever {
        index: &index,
        text_index: &text,
        discard,
        rules: &rules,
        integrity: &store,
        config: RetrieveConfig {
            k: args.k,
            sigmoid: args.sigmoid.resolve(fallback)?,
            merge_text: !args.no_text_merge,
        },
    };
    let pages = retriever.retrieve_all(&queries)?;
    write_jsonl(&args.out, &pages)?;
    let triggered = pages.iter().filter(|p| p.ebr_triggered).count();
    println!(
        "{} queries, EBR fired on {triggered}; results written to {}",
        pages.len(),
        args.out.display()
    );
    Ok(())
}

fn label(args: Label) -> Result<()> {
    let l = IntegrityStore::append(&args.labels, &args.doc_id, args.severity, args.reason)?;
    println!(
        "{} labeled {:?} ({:?}) at ts {}",
        l.doc_id, l.severity, l.reason, l.ts
    );
    Ok(())
}

fn evaluate(args: Evaluate) -> Result<()> {
    let pages: Vec<ResultPage> = read_jsonl(&args.results)?;
    let judgments = load_judgments(&args.judgments)?;
    let report = evaluate_run(&build_sessions(&pages, &judgments)?)?;
    report.save(&args.out)?;
    print!("{}", report.render());
    Ok(())
}

fn compare(args: Compare) -> Result<()> {
    let control = EvalReport::load(&args.control)?;
    let mut rows = Vec::new();
    for spec in &args.tests {
        let (name, path) = match spec.split_once('=') {
            Some((name, path)) => (name.to_string(), PathBuf::from(path)),
            None => {
                let path = PathBuf::from(spec);
                let name = path
                    .file_stem()
                    .map_or(spec.clone(), |s| s.to_string_lossy().into());
                (name, path)
            }
        };
        let test = EvalReport::load(&path)?;
        if test.n_sessions != control.n_sessions {
            return Err(Error::InvalidArgument(format!(
                "{} has {} sessions, control has {}",
                path.display(),
                test.n_sessions,
                control.n_sessions
            ))
            .into());
        }
        rows.push((name, compare_runs(&control, &test)));
    }
    let table: Vec<(&str, &DeltaReport)> = rows.iter().map(|(n, d)| (n.as_str(), d)).collect();
    print!("{}", render_delta_table(&table));
    if let Some(out) = &args.out {
        let by_name: BTreeMap<&str, &DeltaReport> = table.iter().copied().collect();
        write_json(out, &by_name)?;
    }
    Ok(())
}

fn diagnose(args: Diagnose) -> Result<()> {
    let log = load_engagement(&args.log)?;
    let calibration = if args.raw {
        None
    } else {
        Some(args.sigmoid.resolve(SigmoidParams::default())?)
    };
    let opts = TargetOptions {
        min_support: 1,
        calibration,
    };
    let report = diagnose_segment(&log, &args.segment, &args.p, &opts)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::BuildIndex(a) => build_index(a),
        Command::FitThresholds(a) => fit_thresholds(a),
        Command::Search(a) => search(a),
        Command::Label(a) => label(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Compare(a) => compare(a),
        Command::Diagnose(a) => diagnose(a),
        Command::DefaultRules { out } => {
            TriggerRules::default_rules().save(&out)?;
            println!("wrote default trigger rules to {}", out.display());
            Ok(())
        }
    }
}

/// 2 for filesystem failures, 1 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    let io = err.chain().any(|cause| {
        cause.downcast_ref::<Error>().is_some_and(Error::is_io)
            || cause.downcast_ref::<std::io::Error>().is_some()
    });
    if io {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
