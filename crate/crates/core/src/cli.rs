//! Command-line front end. Exit codes: 0 success, 1 usage error, 2 data
//! error, 3 check failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use crate::digest::file_sha256;
use crate::error::{Error, Result};
use crate::fcg::{read_corpus, validate_fcg, write_corpus, Corpus, Label, Strictness};
use crate::featurize::{
    build_vocabulary, embed_graph, SelectionConfig, Vocabulary, DEFAULT_K, DEFAULT_PREFILTER,
};
use crate::gcn::{
    train, AdversarialTraining, EmbeddedGraph, ModelParams, ProjectionCadence, Readout, TrainConfig,
};
use crate::metrics::{compute_metrics, roc_csv};
use crate::robustness::{
    attack_sweep, check_monotonicity, AttackConfig, AttackMode, BenignPool, TargetNodes,
};
use crate::synth::{generate_corpus, manifest, split_corpus, SynthConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_CHECK: i32 = 3;

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(
    name = "monogcn",
    version,
    about = "Monotone GCN malware classifier over function call graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus split into train/val/test plus a benign token pool.
    GenCorpus(GenCorpusArgs),
    /// Select the feature vocabulary from a labeled corpus.
    BuildVocab(BuildVocabArgs),
    /// Train a model.
    Train(TrainArgs),
    /// Score a labeled corpus and write metrics plus a ROC curve.
    Eval(EvalArgs),
    /// Run an additive attack sweep against the malware in a corpus.
    Attack(AttackArgs),
    /// Randomized monotonicity audit of a model.
    CheckMonotone(CheckArgs),
    /// Print a graph and its embedding footprint.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
struct GenCorpusArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 1500)]
    n_benign: usize,
    #[arg(long, default_value_t = 1500)]
    n_malware: usize,
    #[arg(long, default_value_t = 5)]
    min_nodes: usize,
    #[arg(long, default_value_t = 200)]
    max_nodes: usize,
    #[arg(long, default_value_t = 0.6)]
    malicious_token_fraction: f64,
    #[arg(long, default_value_t = 0.3)]
    infected_node_fraction: f64,
    /// Train, validation and test sizes; must sum to the corpus size.
    #[arg(long, default_value = "2000,500,500")]
    split: String,
}

#[derive(Debug, Args)]
struct BuildVocabArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_K)]
    k_api: usize,
    #[arg(long, default_value_t = DEFAULT_K)]
    k_str: usize,
    #[arg(long, default_value_t = DEFAULT_PREFILTER)]
    prefilter: usize,
    #[arg(long)]
    strict: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Training corpus.
    #[arg(long)]
    corpus: PathBuf,
    /// Validation corpus used for early stopping.
    #[arg(long)]
    val: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Model output path.
    #[arg(long)]
    out: PathBuf,
    /// Optional JSON training report.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    nonneg_gcn: bool,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    nonneg_gclf: bool,
    /// Number of adversarial copies of training malware to add (needs --pool).
    #[arg(long, default_value_t = 0)]
    adv_train: usize,
    #[arg(long)]
    pool: Option<PathBuf>,
    #[arg(long)]
    overheads: Option<String>,
    #[arg(long)]
    modes: Option<String>,
    #[arg(long, default_value_t = 3)]
    patience: usize,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 0.008)]
    lr: f64,
    #[arg(long, default_value_t = Readout::Avg)]
    readout: Readout,
    /// Clip after every optimizer step instead of once per epoch.
    #[arg(long)]
    project_per_step: bool,
    #[arg(long)]
    strict: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Metrics report (JSON).
    #[arg(long)]
    out: PathBuf,
    /// ROC curve CSV; defaults to the report path with a `.roc.csv` suffix.
    #[arg(long)]
    roc: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    strict: bool,
}

#[derive(Debug, Args)]
struct AttackArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Corpus to attack; only its malware records are used.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    pool: PathBuf,
    /// Attack report table.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    overheads: Option<String>,
    #[arg(long, default_value = "inject_existing,add_dead_nodes")]
    modes: String,
    #[arg(long, default_value_t = 1)]
    trials: usize,
    /// Fraction of existing functions receiving injections, or `all`.
    #[arg(long, default_value = "0.5")]
    target: String,
    #[arg(long, default_value_t = 20)]
    dead_node_tokens: usize,
    /// Overheads robust accuracy is computed over (default: all positive ones).
    #[arg(long)]
    reference_overheads: Option<String>,
    #[arg(long)]
    early_stop: bool,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    strict: bool,
}

#[derive(Debug, Args)]
struct CheckArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Optional JSON report.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    strict: bool,
}

#[derive(Debug, Args)]
struct InspectArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Graph to show; the first record when absent.
    #[arg(long)]
    graph_id: Option<String>,
    /// Show the embedding footprint under this vocabulary.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    strict: bool,
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code. Diagnostics go to stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    EXIT_OK
                }
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::GenCorpus(a) => gen_corpus(a),
        Command::BuildVocab(a) => build_vocab(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Attack(a) => attack(a),
        Command::CheckMonotone(a) => check_monotone(a),
        Command::Inspect(a) => inspect(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidConfig(_) => EXIT_USAGE,
                _ => EXIT_DATA,
            }
        }
    }
}

fn strictness(strict: bool) -> Strictness {
    if strict {
        Strictness::Strict
    } else {
        Strictness::Lenient
    }
}

fn load_corpus(path: &Path, strict: bool) -> Result<Corpus> {
    let (corpus, warnings) = read_corpus(path, strictness(strict))?;
    for w in warnings {
        eprintln!("warning: {}: {w}", path.display());
    }
    Ok(corpus)
}

fn parse_csv<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|e| Error::InvalidConfig(format!("bad {what} `{s}`: {e}")))
        })
        .collect()
}

/// Refuses to overwrite an input file with an output.
fn ensure_distinct(out: &Path, inputs: &[&Path]) -> Result<()> {
    let key = |p: &Path| std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
    let target = key(out);
    match inputs.iter().find(|p| key(p) == target) {
        Some(p) => Err(Error::InvalidConfig(format!(
            "output {} would overwrite input {}",
            out.display(),
            p.display()
        ))),
        None => Ok(()),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn to_json(value: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("json values serialize");
    s.push('\n');
    s
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(Error::InvalidConfig("--threads must be >= 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn gen_corpus(a: GenCorpusArgs) -> Result<i32> {
    let cfg = SynthConfig {
        n_benign: a.n_benign,
        n_malware: a.n_malware,
        min_nodes: a.min_nodes,
        max_nodes: a.max_nodes,
        malicious_token_fraction: a.malicious_token_fraction,
        infected_node_fraction: a.infected_node_fraction,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let sizes: Vec<usize> = parse_csv(&a.split, "split size")?;
    if sizes.len() != 3 || sizes.iter().sum::<usize>() != cfg.n_benign + cfg.n_malware {
        return Err(Error::InvalidConfig(format!(
            "--split needs three sizes summing to {}",
            cfg.n_benign + cfg.n_malware
        )));
    }
    let (corpus, pool) = generate_corpus(&cfg)?;
    let parts = split_corpus(&corpus, &sizes, cfg.seed)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;

    let mut outputs = BTreeMap::new();
    for (name, part) in ["train", "val", "test"].iter().zip(&parts) {
        let path = a.out.join(format!("{name}.jsonl"));
        write_corpus(part, &path)?;
        outputs.insert(format!("{name}.jsonl"), file_sha256(&path)?);
    }
    let pool_path = a.out.join("pool.tsv");
    pool.save(&pool_path)?;
    outputs.insert("pool.tsv".into(), file_sha256(&pool_path)?);
    let mut text = manifest(&cfg, &outputs);
    text.push('\n');
    write_file(&a.out.join("manifest.json"), &text)?;
    println!(
        "wrote {} graphs ({} benign, {} malware) to {}",
        corpus.len(),
        cfg.n_benign,
        cfg.n_malware,
        a.out.display()
    );
    Ok(EXIT_OK)
}

fn build_vocab(a: BuildVocabArgs) -> Result<i32> {
    ensure_distinct(&a.out, &[&a.corpus])?;
    let corpus = load_corpus(&a.corpus, a.strict)?;
    let vocab = build_vocabulary(
        &corpus,
        a.k_api,
        a.k_str,
        &SelectionConfig {
            prefilter: a.prefilter,
        },
    )?;
    if vocab.api_shortfall() > 0 || vocab.string_shortfall() > 0 {
        eprintln!(
            "warning: vocabulary short by {} api and {} string tokens",
            vocab.api_shortfall(),
            vocab.string_shortfall()
        );
    }
    vocab.save(&a.out)?;
    println!(
        "vocabulary: {} api + {} string tokens, sha256 {}",
        vocab.api_tokens.len(),
        vocab.string_tokens.len(),
        vocab.content_hash()
    );
    Ok(EXIT_OK)
}

fn attack_config(seed: u64, overheads: Option<&str>, modes: Option<&str>) -> Result<AttackConfig> {
    let mut cfg = AttackConfig {
        seed,
        ..AttackConfig::default()
    };
    if let Some(o) = overheads {
        cfg.overheads = parse_csv(o, "overhead")?;
    }
    if let Some(m) = modes {
        cfg.modes = parse_csv::<AttackMode>(m, "mode")?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train_cmd(a: TrainArgs) -> Result<i32> {
    let mut inputs: Vec<&Path> = vec![&a.corpus, &a.val, &a.vocab];
    if let Some(p) = &a.pool {
        inputs.push(p);
    }
    ensure_distinct(&a.out, &inputs)?;
    if let Some(r) = &a.report {
        ensure_distinct(r, &inputs)?;
        ensure_distinct(r, &[&a.out])?;
    }
    let adversarial_training = match (a.adv_train, &a.pool) {
        (0, _) => None,
        (_, None) => return Err(Error::InvalidConfig("--adv-train needs --pool".into())),
        (count, Some(pool)) => Some(AdversarialTraining {
            count,
            attack: attack_config(a.seed, a.overheads.as_deref(), a.modes.as_deref())?,
            pool: BenignPool::load(pool)?,
        }),
    };
    let cfg = TrainConfig {
        learning_rate: a.lr,
        batch_size: a.batch,
        patience: a.patience,
        max_epochs: a.epochs,
        readout: a.readout,
        seed: a.seed,
        nonneg_gcn: a.nonneg_gcn,
        nonneg_gclf: a.nonneg_gclf,
        adversarial_training,
        projection_cadence: if a.project_per_step {
            ProjectionCadence::PerStep
        } else {
            ProjectionCadence::PerEpoch
        },
        ..TrainConfig::default()
    };
    cfg.validate()?;
    let train_set = load_corpus(&a.corpus, a.strict)?;
    let val_set = load_corpus(&a.val, a.strict)?;
    let vocab = Vocabulary::load(&a.vocab)?;

    let (model, report) = train(&train_set, &val_set, &vocab, &cfg)?;
    model.save(&vocab, &a.out)?;
    println!(
        "trained {} epochs (best {}), val accuracy {:.4}, governed negatives {}",
        report.epochs.len(),
        report.best_epoch,
        report.epochs[report.best_epoch - 1].val_accuracy,
        report.audit.governed_negatives,
    );

    if let Some(path) = &a.report {
        let mut digests = BTreeMap::new();
        digests.insert("corpus", file_sha256(&a.corpus)?);
        digests.insert("val", file_sha256(&a.val)?);
        digests.insert("vocab", file_sha256(&a.vocab)?);
        if let Some(p) = &a.pool {
            digests.insert("pool", file_sha256(p)?);
        }
        let value = json!({
            "tool_version": VERSION,
            "seed": a.seed,
            "inputs_sha256": digests,
            "model_sha256": file_sha256(&a.out)?,
            "config": {
                "learning_rate": cfg.learning_rate,
                "batch_size": cfg.batch_size,
                "patience": cfg.patience,
                "max_epochs": cfg.max_epochs,
                "dims": model.dims,
                "readout": cfg.readout,
                "nonneg_gcn": cfg.nonneg_gcn,
                "nonneg_gclf": cfg.nonneg_gclf,
                "adversarial_training": a.adv_train,
                "projection_cadence": cfg.projection_cadence,
            },
            "training": report,
        });
        write_file(path, &to_json(&value))?;
    }
    Ok(EXIT_OK)
}

fn load_model(model: &Path, vocab: &Path) -> Result<(ModelParams, Vocabulary)> {
    let vocab = Vocabulary::load(vocab)?;
    let model = ModelParams::load(model, &vocab)?;
    Ok((model, vocab))
}

fn eval(a: EvalArgs) -> Result<i32> {
    let roc_path = a.roc.clone().unwrap_or_else(|| {
        let mut name = a.out.file_stem().unwrap_or_default().to_os_string();
        name.push(".roc.csv");
        a.out.with_file_name(name)
    });
    let inputs: [&Path; 3] = [&a.model, &a.vocab, &a.corpus];
    ensure_distinct(&a.out, &inputs)?;
    ensure_distinct(&roc_path, &inputs)?;
    ensure_distinct(&roc_path, &[&a.out])?;

    let (model, vocab) = load_model(&a.model, &a.vocab)?;
    let corpus = load_corpus(&a.corpus, a.strict)?;
    corpus.require_labeled()?;
    let graphs = EmbeddedGraph::embed_corpus(&corpus, &vocab)?;
    let scores: Vec<f64> = with_threads(a.threads, || {
        graphs
            .par_iter()
            .map(|g| model.score(&g.adj, &g.x))
            .collect::<Result<Vec<f64>>>()
    })??;
    let labels: Vec<bool> = corpus
        .records
        .iter()
        .map(|g| g.label == Some(Label::Malware))
        .collect();
    let metrics = compute_metrics(&scores, &labels)?;

    let value = json!({
        "tool_version": VERSION,
        "seed": serde_json::Value::Null,
        "threshold": crate::robustness::THRESHOLD,
        "inputs_sha256": {
            "model": file_sha256(&a.model)?,
            "vocab": file_sha256(&a.vocab)?,
            "corpus": file_sha256(&a.corpus)?,
        },
        "metrics": metrics,
    });
    write_file(&a.out, &to_json(&value))?;
    if let Some(roc) = &metrics.roc {
        write_file(&roc_path, &roc_csv(roc))?;
    } else {
        eprintln!("warning: single-class corpus, ROC and AUC not defined");
    }
    println!(
        "accuracy {:.4} precision {:.4} recall {:.4} f1 {:.4} auc {}",
        metrics.accuracy,
        metrics.precision,
        metrics.recall,
        metrics.f1,
        metrics
            .auc
            .map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"))
    );
    Ok(EXIT_OK)
}

fn attack(a: AttackArgs) -> Result<i32> {
    ensure_distinct(&a.out, &[&a.model, &a.vocab, &a.corpus, &a.pool])?;
    let mut cfg = attack_config(a.seed, a.overheads.as_deref(), Some(&a.modes))?;
    cfg.trials_per_sample = a.trials;
    cfg.tokens_per_dead_node = a.dead_node_tokens;
    cfg.early_stop = a.early_stop;
    cfg.target_nodes = if a.target == "all" {
        TargetNodes::All
    } else {
        TargetNodes::RandomFraction(a.target.parse().map_err(|_| {
            Error::InvalidConfig(format!(
                "--target must be `all` or a fraction, got `{}`",
                a.target
            ))
        })?)
    };
    if let Some(r) = &a.reference_overheads {
        cfg.reference_overheads = Some(parse_csv(r, "overhead")?);
    }
    cfg.validate()?;

    let (model, vocab) = load_model(&a.model, &a.vocab)?;
    let pool = BenignPool::load(&a.pool)?;
    let malware = load_corpus(&a.corpus, a.strict)?.with_label(Label::Malware);
    let report = with_threads(a.threads, || {
        attack_sweep(&model, &vocab, &malware, &pool, &cfg)
    })??;

    let fmt_list = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
    let mut meta = BTreeMap::new();
    meta.insert("tool_version".into(), VERSION.to_string());
    meta.insert("seed".into(), a.seed.to_string());
    meta.insert("model_sha256".into(), file_sha256(&a.model)?);
    meta.insert("vocab_sha256".into(), file_sha256(&a.vocab)?);
    meta.insert("corpus_sha256".into(), file_sha256(&a.corpus)?);
    meta.insert("pool_sha256".into(), file_sha256(&a.pool)?);
    meta.insert(
        "modes".into(),
        cfg.modes
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(","),
    );
    meta.insert("overheads".into(), fmt_list(&cfg.overheads));
    meta.insert(
        "trials_per_sample".into(),
        cfg.trials_per_sample.to_string(),
    );
    meta.insert(
        "target_nodes".into(),
        match cfg.target_nodes {
            TargetNodes::All => "all".into(),
            TargetNodes::RandomFraction(f) => f.to_string(),
        },
    );
    meta.insert(
        "tokens_per_dead_node".into(),
        cfg.tokens_per_dead_node.to_string(),
    );
    meta.insert("early_stop".into(), cfg.early_stop.to_string());
    write_file(&a.out, &report.to_table(&meta))?;

    println!(
        "{} malware samples, {} originally detected",
        report.samples, report.originally_detected
    );
    for p in &report.curve {
        println!(
            "overhead {:>6}%: evaded {}/{} ({:.4})",
            p.overhead_pct, p.evaded, p.eligible, p.success_rate
        );
    }
    let ra = &report.robust_accuracy;
    let show = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
    println!(
        "robust accuracy overall {} conditioned {}",
        show(ra.overall),
        show(ra.conditioned)
    );
    Ok(EXIT_OK)
}

fn check_monotone(a: CheckArgs) -> Result<i32> {
    if let Some(out) = &a.out {
        ensure_distinct(out, &[&a.model, &a.vocab, &a.corpus])?;
    }
    let (model, vocab) = load_model(&a.model, &a.vocab)?;
    let corpus = load_corpus(&a.corpus, a.strict)?;
    let report = with_threads(a.threads, || {
        check_monotonicity(&model, &vocab, &corpus, a.trials, a.seed)
    })??;
    if let Some(out) = &a.out {
        let value = json!({
            "tool_version": VERSION,
            "seed": a.seed,
            "inputs_sha256": {
                "model": file_sha256(&a.model)?,
                "vocab": file_sha256(&a.vocab)?,
                "corpus": file_sha256(&a.corpus)?,
            },
            "passed": report.passed(),
            "report": report,
        });
        write_file(out, &to_json(&value))?;
    }
    println!(
        "{} trials, {} violations (max drop {:e}), {} gradient violations over {} graphs{}",
        report.trials,
        report.violations.len(),
        report.max_violation,
        report.gradient_violations,
        report.graphs_audited,
        if report.informational {
            " [model is not fully non-negative, no guarantee applies]"
        } else {
            ""
        }
    );
    if report.passed() {
        Ok(EXIT_OK)
    } else {
        eprintln!("error: monotonicity check failed");
        Ok(EXIT_CHECK)
    }
}

fn inspect(a: InspectArgs) -> Result<i32> {
    let corpus = load_corpus(&a.corpus, a.strict)?;
    let g = match &a.graph_id {
        Some(id) => corpus
            .records
            .iter()
            .find(|g| &g.graph_id == id)
            .ok_or_else(|| Error::InvalidCorpus(format!("no graph with id {id}")))?,
        None => corpus
            .records
            .first()
            .ok_or_else(|| Error::InvalidCorpus("empty corpus".into()))?,
    };
    println!("graph_id: {}", g.graph_id);
    println!(
        "label:    {}",
        g.label
            .map_or_else(|| "(none)".to_string(), |l| l.to_string())
    );
    println!("main:     {}", g.main_id);
    println!(
        "nodes: {}  edges: {}  tokens: {}",
        g.nodes.len(),
        g.edges.len(),
        g.token_count()
    );
    let report = validate_fcg(g);
    for e in &report.errors {
        println!("  error: {e}");
    }
    for w in &report.warnings {
        println!("  warning: {w}");
    }
    for node in &g.nodes {
        println!(
            "  {} apis={} strings={}",
            node.id,
            node.apis.len(),
            node.strings.len()
        );
    }
    if let Some(path) = &a.vocab {
        if !report.is_ok() {
            return Err(Error::InvalidGraph {
                graph_id: g.graph_id.clone(),
                violations: report
                    .errors
                    .iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join("; "),
            });
        }
        let vocab = Vocabulary::load(path)?;
        let x = embed_graph(g, &vocab);
        println!(
            "embedding: {} x {}, {} non-zero entries, vocabulary sha256 {}",
            x.n(),
            vocab.dim(),
            x.nnz(),
            vocab.content_hash()
        );
        for (i, id) in x.node_order.iter().enumerate() {
            let feats: Vec<String> = x
                .row(i)
                .iter()
                .map(|&(j, c)| {
                    let (kind, tok) = vocab.token_at(j).expect("feature index within vocabulary");
                    format!("{kind}:{tok}x{c}")
                })
                .collect();
            if !feats.is_empty() {
                println!("  {id}: {}", feats.join(" "));
            }
        }
    }
    Ok(EXIT_OK)
}
