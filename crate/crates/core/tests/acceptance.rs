//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Run with `cargo test -p monogcn --test acceptance`.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use monogcn::digest::sha256_hex;
use monogcn::fcg::{Corpus, Fcg, FunctionNode, Label};
use monogcn::featurize::{build_vocabulary, SelectionConfig, Vocabulary};
use monogcn::gcn::{
    evaluate, loss_and_gradients, train, Dims, EmbeddedGraph, ModelParams, NormalizedAdjacency,
    ProjectionCadence, Readout, Sample, TrainConfig,
};
use monogcn::metrics::compute_metrics;
use monogcn::robustness::{
    attack_sweep, perturb_features, AttackConfig, AttackMode, BenignPool, MONOTONE_SLACK,
};
use monogcn::synth::{generate_corpus, split_corpus, SynthConfig};

const SPLIT: [usize; 3] = [2000, 500, 500];

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Outcome {
            passed,
            detail: detail.into(),
        }
    }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

// ---------------------------------------------------------------- shared data

struct Dataset {
    train: Corpus,
    val: Corpus,
    test: Corpus,
    pool: BenignPool,
    vocab: Vocabulary,
}

fn dataset(seed: u64) -> Dataset {
    let (corpus, pool) = generate_corpus(&SynthConfig {
        seed,
        ..SynthConfig::default()
    })
    .expect("default synthetic config is valid");
    let mut parts = split_corpus(&corpus, &SPLIT, seed)
        .expect("split fits")
        .into_iter();
    let (train, val, test) = (
        parts.next().unwrap(),
        parts.next().unwrap(),
        parts.next().unwrap(),
    );
    let vocab =
        build_vocabulary(&train, 500, 500, &SelectionConfig::default()).expect("vocabulary");
    Dataset {
        train,
        val,
        test,
        pool,
        vocab,
    }
}

struct Trained {
    model: ModelParams,
    val_accuracy: f64,
    epochs: usize,
    elapsed: Duration,
}

fn train_model(data: &Dataset, seed: u64, nonneg_gcn: bool, nonneg_gclf: bool) -> Trained {
    let cfg = TrainConfig {
        seed,
        nonneg_gcn,
        nonneg_gclf,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let (model, report) =
        train(&data.train, &data.val, &data.vocab, &cfg).expect("training succeeds");
    let elapsed = start.elapsed();
    let val = EmbeddedGraph::embed_corpus(&data.val, &data.vocab).unwrap();
    let (_, val_accuracy) = evaluate(&model, &val).unwrap();
    Trained {
        model,
        val_accuracy,
        epochs: report.epochs.len(),
        elapsed,
    }
}

// ------------------------------------------------------------ criterion 1

fn random_nonneg_model<R: Rng>(rng: &mut R, d: usize, readout: Readout) -> ModelParams {
    let dims = Dims {
        d,
        h1: rng.gen_range(1..=32),
        h2: rng.gen_range(1..=32),
        hg: rng.gen_range(1..=16),
    };
    let mut m = ModelParams::zeros(dims);
    m.nonneg_gcn = true;
    m.nonneg_gclf = true;
    m.readout = readout;
    let scale = rng.gen_range(0.01..0.3);
    let zero_fraction = rng.gen_range(0.0..0.6);
    for (k, t) in m.tensors_mut().into_iter().enumerate() {
        let bias = k == 3 || k == 5;
        for w in t.iter_mut() {
            *w = if bias {
                rng.gen_range(-1.0..1.0)
            } else if rng.gen_bool(zero_fraction) {
                0.0
            } else {
                rng.gen_range(0.0..scale)
            };
        }
    }
    m
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let (corpus, _) = generate_corpus(&SynthConfig {
        n_benign: 40,
        n_malware: 40,
        max_nodes: 60,
        seed: 1,
        ..SynthConfig::default()
    })
    .unwrap();
    let vocab = build_vocabulary(&corpus, 50, 50, &SelectionConfig::default()).unwrap();
    let graphs = EmbeddedGraph::embed_corpus(&corpus, &vocab).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let readouts = [Readout::Avg, Readout::Sum, Readout::Max];
    let (mut violations, mut worst_drop, mut min_grad) = (0usize, 0.0f64, f64::INFINITY);
    for trial in 0..1000 {
        let m = random_nonneg_model(&mut rng, vocab.dim(), readouts[trial % 3]);
        let g = &graphs[rng.gen_range(0..graphs.len())];
        let delta: Vec<(usize, usize, u32)> = (0..rng.gen_range(1..=10))
            .map(|_| {
                (
                    rng.gen_range(0..g.x.n()),
                    rng.gen_range(0..vocab.dim()),
                    rng.gen_range(1..=5),
                )
            })
            .collect();
        let before = m.score(&g.adj, &g.x).unwrap();
        let after = m.score(&g.adj, &perturb_features(&g.x, &delta)).unwrap();
        if after < before - MONOTONE_SLACK {
            violations += 1;
        }
        worst_drop = worst_drop.max(before - after);
        let grad = m.input_gradient(&g.adj, &g.x).unwrap();
        min_grad = grad.iter().copied().fold(min_grad, f64::min);
    }
    let elapsed = start.elapsed();
    Outcome::new(
        violations == 0 && min_grad >= -1e-12 && elapsed < Duration::from_secs(60),
        format!(
            "1000 trials, {violations} violations, largest drop {worst_drop:e}, min input gradient {min_grad:e}, {}",
            secs(elapsed)
        ),
    )
}

// ------------------------------------------------------------ criterion 5

fn random_dense_model<R: Rng>(rng: &mut R) -> ModelParams {
    let dims = Dims {
        d: rng.gen_range(1..=6),
        h1: rng.gen_range(1..=4),
        h2: rng.gen_range(1..=4),
        hg: rng.gen_range(1..=4),
    };
    let mut m = ModelParams::zeros(dims);
    m.readout = [Readout::Avg, Readout::Sum, Readout::Max][rng.gen_range(0..3)];
    for t in m.tensors_mut() {
        for w in t.iter_mut() {
            *w = rng.gen_range(-1.0..1.0);
        }
    }
    m
}

/// True when a ReLU input or a max-readout competition sits within `margin`
/// of a kink, where finite differences are not meaningful.
fn near_kink(m: &ModelParams, adj: &NormalizedAdjacency, x: &Array2<f64>, margin: f64) -> bool {
    let c = m.forward(adj, x).unwrap();
    let close = |v: &f64| v.abs() < margin;
    if c.z1.iter().any(close) || c.z2.iter().any(close) || c.z_hidden.iter().any(close) {
        return true;
    }
    if m.readout == Readout::Max && c.h2.nrows() > 1 {
        for col in c.h2.columns() {
            let mut v: Vec<f64> = col.to_vec();
            v.sort_by(|a, b| b.total_cmp(a));
            // an all-zero column passes no gradient whichever row wins
            if v[0] > 0.0 && v[0] - v[1] < margin {
                return true;
            }
        }
    }
    false
}

fn close(analytic: f64, numeric: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= 1e-8 || diff <= 1e-4 * analytic.abs().max(numeric.abs())
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-4;
    let (mut accepted, mut rejected, mut mismatches, mut checked) = (0, 0, 0, 0usize);
    let mut worst = 0.0f64;
    while accepted < 50 {
        let mut m = random_dense_model(&mut rng);
        let n = rng.gen_range(1..=5);
        let edges: Vec<(usize, usize)> = (0..rng.gen_range(0..=n * 2))
            .map(|_| (rng.gen_range(0..n), rng.gen_range(0..n)))
            .collect();
        let adj = NormalizedAdjacency::from_edges(n, edges);
        let x = Array2::from_shape_fn((n, m.dims.d), |_| rng.gen_range(0.0..2.0));
        let label = f64::from(rng.gen_range(0..2u8));
        let p = m.score(&adj, &x).unwrap();
        if near_kink(&m, &adj, &x, 1e-3) || !(1e-5..=1.0 - 1e-5).contains(&p) {
            rejected += 1;
            continue;
        }
        accepted += 1;

        let loss_at = |m: &ModelParams| {
            loss_and_gradients(
                m,
                &[Sample {
                    adj: &adj,
                    x: &x,
                    label,
                }],
            )
            .unwrap()
            .0
        };
        let (_, grads) = loss_and_gradients(
            &m,
            &[Sample {
                adj: &adj,
                x: &x,
                label,
            }],
        )
        .unwrap();
        let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
        for (k, analytic_t) in analytic.iter().enumerate() {
            for (i, &a) in analytic_t.iter().enumerate() {
                let orig = m.tensors()[k][i];
                m.tensors_mut()[k][i] = orig + h;
                let up = loss_at(&m);
                m.tensors_mut()[k][i] = orig - h;
                let down = loss_at(&m);
                m.tensors_mut()[k][i] = orig;
                let numeric = (up - down) / (2.0 * h);
                checked += 1;
                worst = worst.max((a - numeric).abs());
                if !close(a, numeric) {
                    mismatches += 1;
                }
            }
        }

        let grad_x = m.input_gradient(&adj, &x).unwrap();
        for i in 0..n {
            for j in 0..m.dims.d {
                let mut xp = x.clone();
                xp[[i, j]] += h;
                let mut xm = x.clone();
                xm[[i, j]] -= h;
                let numeric =
                    (m.score(&adj, &xp).unwrap() - m.score(&adj, &xm).unwrap()) / (2.0 * h);
                checked += 1;
                worst = worst.max((grad_x[[i, j]] - numeric).abs());
                if !close(grad_x[[i, j]], numeric) {
                    mismatches += 1;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    Outcome::new(
        mismatches == 0 && elapsed < Duration::from_secs(30),
        format!(
            "50 instances ({rejected} near-kink draws skipped), {checked} entries, {mismatches} mismatches, max abs diff {worst:e}, {}",
            secs(elapsed)
        ),
    )
}

// ------------------------------------------------------------ criterion 6

/// `D^-1/2 (A + A^T clipped to 1, plus I) D^-1/2` with every matrix built
/// explicitly and multiplied densely.
fn brute_force_adjacency(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<f64>> {
    let mut a = vec![vec![0.0; n]; n];
    for &(i, j) in edges {
        a[i][j] = 1.0;
        a[j][i] = 1.0;
    }
    for (i, row) in a.iter_mut().enumerate() {
        row[i] += 1.0;
    }
    let mut d_inv_sqrt = vec![vec![0.0; n]; n];
    for i in 0..n {
        let degree: f64 = a[i].iter().sum();
        d_inv_sqrt[i][i] = 1.0 / degree.sqrt();
    }
    let matmul = |x: &Vec<Vec<f64>>, y: &Vec<Vec<f64>>| {
        let mut out = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    out[i][j] += x[i][k] * y[k][j];
                }
            }
        }
        out
    };
    matmul(&matmul(&d_inv_sqrt, &a), &d_inv_sqrt)
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for t in 0..500 {
        let n = rng.gen_range(1..=6);
        let ids: Vec<String> = (0..n).map(|i| format!("f{i}")).collect();
        // no self calls: normalization strips them before the adjacency is built
        let edges: Vec<(usize, usize)> = (0..rng.gen_range(0..=n * n))
            .map(|_| (rng.gen_range(0..n), rng.gen_range(0..n)))
            .filter(|(a, b)| a != b)
            .collect();
        let g = Fcg {
            graph_id: format!("t{t}"),
            label: None,
            main_id: ids[0].clone(),
            nodes: ids.iter().map(FunctionNode::new).collect(),
            edges: edges
                .iter()
                .map(|&(a, b)| (ids[a].clone(), ids[b].clone()))
                .collect(),
        };
        let g = monogcn::fcg::normalize_fcg(&g).unwrap();
        let index = g.node_index();
        let normalized_edges: Vec<(usize, usize)> = g
            .edges
            .iter()
            .map(|(a, b)| (index[a.as_str()], index[b.as_str()]))
            .collect();
        let expected = brute_force_adjacency(n, &normalized_edges);
        let got = NormalizedAdjacency::from_fcg(&g).to_dense();
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((got[[i, j]] - expected[i][j]).abs());
            }
        }
    }
    Outcome::new(
        worst < 1e-12,
        format!("500 topologies with up to 6 nodes, max abs deviation {worst:e}"),
    )
}

// ------------------------------------------------------------ criterion 7

fn concordance(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                den += 1.0;
                num += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for set in 0..100 {
        let n = rng.gen_range(2..=200);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        let levels = if set % 2 == 0 { 10 } else { 1_000_000 };
        let scores: Vec<f64> = (0..n)
            .map(|_| rng.gen_range(0..levels) as f64 / levels as f64)
            .collect();
        let auc = compute_metrics(&scores, &labels).unwrap().auc.unwrap();
        worst = worst.max((auc - concordance(&scores, &labels)).abs());
    }
    Outcome::new(
        worst < 1e-9,
        format!("100 score sets, max |auc - concordance| {worst:e}"),
    )
}

// ------------------------------------------------------------ criterion 8

fn pipeline_digests(dir: &Path, threads: &str) -> BTreeMap<String, String> {
    let p = |name: &str| dir.join(name).to_str().unwrap().to_string();
    let run = |args: &[&str]| {
        let mut argv = vec!["monogcn"];
        argv.extend_from_slice(args);
        let code = monogcn::cli::run(argv);
        assert_eq!(code, 0, "command failed: {args:?}");
    };
    let data = p("data");
    run(&[
        "gen-corpus",
        "--out",
        &data,
        "--seed",
        "8",
        "--n-benign",
        "60",
        "--n-malware",
        "60",
        "--max-nodes",
        "40",
        "--split",
        "80,20,20",
    ]);
    let train_path = format!("{data}/train.jsonl");
    let val_path = format!("{data}/val.jsonl");
    let test_path = format!("{data}/test.jsonl");
    let pool_path = format!("{data}/pool.tsv");
    run(&[
        "build-vocab",
        "--corpus",
        &train_path,
        "--out",
        &p("vocab.tsv"),
        "--k-api",
        "100",
        "--k-str",
        "100",
    ]);
    run(&[
        "train",
        "--corpus",
        &train_path,
        "--val",
        &val_path,
        "--vocab",
        &p("vocab.tsv"),
        "--out",
        &p("model.txt"),
        "--report",
        &p("train.json"),
        "--seed",
        "8",
        "--epochs",
        "4",
    ]);
    run(&[
        "eval",
        "--model",
        &p("model.txt"),
        "--vocab",
        &p("vocab.tsv"),
        "--corpus",
        &test_path,
        "--out",
        &p("metrics.json"),
        "--threads",
        threads,
    ]);
    run(&[
        "attack",
        "--model",
        &p("model.txt"),
        "--vocab",
        &p("vocab.tsv"),
        "--corpus",
        &test_path,
        "--pool",
        &pool_path,
        "--out",
        &p("attack.tsv"),
        "--seed",
        "8",
        "--threads",
        threads,
    ]);
    let mut digests = BTreeMap::new();
    for entry in walk(dir) {
        let rel = entry
            .strip_prefix(dir)
            .unwrap()
            .to_str()
            .unwrap()
            .to_string();
        digests.insert(rel, sha256_hex(&std::fs::read(&entry).unwrap()));
    }
    digests
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(walk(&path));
        } else {
            out.push(path);
        }
    }
    out.sort();
    out
}

fn criterion_8() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = pipeline_digests(a.path(), "1");
    let second = pipeline_digests(b.path(), "3");
    let differing: Vec<&String> = first
        .iter()
        .filter(|(k, v)| second.get(*k) != Some(v))
        .map(|(k, _)| k)
        .collect();
    Outcome::new(
        differing.is_empty() && first.len() == second.len() && first.len() >= 10,
        format!(
            "{} artifacts compared across two runs (1 vs 3 worker threads), differing: {:?}",
            first.len(),
            differing
        ),
    )
}

// ------------------------------------------------ criteria 2, 3, 4 and 9

fn attack_config(modes: Vec<AttackMode>, overheads: Vec<f64>) -> AttackConfig {
    AttackConfig {
        modes,
        overheads,
        seed: 42,
        ..AttackConfig::default()
    }
}

fn governed_min(m: &ModelParams) -> f64 {
    let t = m.tensors();
    let mut governed: Vec<&[f64]> = Vec::new();
    if m.nonneg_gcn {
        governed.extend([t[0], t[1]]);
    }
    if m.nonneg_gclf {
        governed.extend([t[2], t[4]]);
    }
    governed
        .iter()
        .flat_map(|s| s.iter().copied())
        .fold(f64::INFINITY, f64::min)
}

fn projection_audit(models: &[(&str, &ModelParams)]) -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for (name, m) in models {
        let min = governed_min(m);
        // NaN never satisfies >= 0
        let pass = min >= 0.0 && m.governed_negatives() == 0;
        ok &= pass;
        lines.push(format!("{name}: min governed weight {min}"));
    }

    // short run with per-step projection on a small corpus
    let (corpus, _) = generate_corpus(&SynthConfig {
        n_benign: 60,
        n_malware: 60,
        max_nodes: 40,
        seed: 9,
        ..SynthConfig::default()
    })
    .unwrap();
    let parts = split_corpus(&corpus, &[90, 30], 9).unwrap();
    let vocab = build_vocabulary(&parts[0], 100, 100, &SelectionConfig::default()).unwrap();
    for (gcn, gclf) in [(true, true), (true, false), (false, true)] {
        let cfg = TrainConfig {
            seed: 9,
            max_epochs: 3,
            nonneg_gcn: gcn,
            nonneg_gclf: gclf,
            projection_cadence: ProjectionCadence::PerStep,
            ..TrainConfig::default()
        };
        let (m, _) = train(&parts[0], &parts[1], &vocab, &cfg).unwrap();
        let min = governed_min(&m);
        ok &= min >= 0.0;
        lines.push(format!(
            "per-step gcn={gcn} gclf={gclf}: min governed weight {min}"
        ));
    }
    Outcome::new(ok, lines.join("; "))
}

fn main() {
    let mut results: Vec<(u8, &str, Outcome)> = Vec::new();
    let mut report = |id: u8, name: &'static str, o: Outcome| {
        println!(
            "criterion {id}: {} - {name}: {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
        results.push((id, name, o));
    };

    report(1, "monotonicity of non-negative models", criterion_1());
    report(5, "gradients match finite differences", criterion_5());
    report(6, "normalized adjacency oracle", criterion_6());
    report(7, "AUC equals pairwise concordance", criterion_7());
    report(8, "bitwise determinism of the pipeline", criterion_8());

    let d42 = dataset(42);
    let plus42 = train_model(&d42, 42, true, true);
    println!(
        "  trained non-negative model, seed 42: {} epochs, {}",
        plus42.epochs,
        secs(plus42.elapsed)
    );

    // criterion 2
    {
        let start = Instant::now();
        let malware = d42.test.with_label(Label::Malware);
        let r = attack_sweep(
            &plus42.model,
            &d42.vocab,
            &malware,
            &d42.pool,
            &attack_config(
                vec![AttackMode::InjectExisting],
                AttackConfig::default().overheads,
            ),
        )
        .unwrap();
        let elapsed = plus42.elapsed + start.elapsed();
        let evasions = r.total_evasions();
        report(
            2,
            "inject-only attack never evades the non-negative model",
            Outcome::new(
                evasions == 0 && r.originally_detected > 0 && elapsed < Duration::from_secs(300),
                format!(
                    "{} of {} test malware originally detected, {evasions} evasions over {} overheads, {} including training",
                    r.originally_detected,
                    r.samples,
                    r.curve.len(),
                    secs(elapsed)
                ),
            ),
        );
    }

    let unc42 = train_model(&d42, 42, false, false);
    println!(
        "  trained unconstrained model, seed 42: {} epochs, {}",
        unc42.epochs,
        secs(unc42.elapsed)
    );
    let gcnp42 = train_model(&d42, 42, true, false);
    println!(
        "  trained GCN-only non-negative model, seed 42: {} epochs, {}",
        gcnp42.epochs,
        secs(gcnp42.elapsed)
    );

    // criterion 3
    {
        let malware = d42.test.with_label(Label::Malware);
        let cfg = attack_config(
            vec![AttackMode::InjectExisting, AttackMode::AddDeadNodes],
            vec![200.0],
        );
        let robust = |m: &ModelParams| {
            attack_sweep(m, &d42.vocab, &malware, &d42.pool, &cfg)
                .unwrap()
                .robust_accuracy
        };
        let (plus, gcn_only, unconstrained) = (
            robust(&plus42.model),
            robust(&gcnp42.model),
            robust(&unc42.model),
        );
        let c = |r: &monogcn::robustness::RobustAccuracy| r.conditioned.unwrap_or(0.0);
        let o = |r: &monogcn::robustness::RobustAccuracy| r.overall.unwrap_or(0.0);
        let passed = c(&plus) == 1.0
            && c(&plus) >= c(&gcn_only)
            && c(&gcn_only) >= c(&unconstrained)
            && o(&plus) >= o(&gcn_only)
            && o(&gcn_only) >= o(&unconstrained);
        report(
            3,
            "robust accuracy ordering at 200% combined-mode overhead",
            Outcome::new(
                passed,
                format!(
                    "detected-conditioned: non-negative {:.4}, GCN-only {:.4}, unconstrained {:.4}; over all malware: {:.4}, {:.4}, {:.4}",
                    c(&plus),
                    c(&gcn_only),
                    c(&unconstrained),
                    o(&plus),
                    o(&gcn_only),
                    o(&unconstrained)
                ),
            ),
        );
    }

    // criterion 4
    let mut extra = Vec::new();
    {
        let mut lines = vec![];
        let mut ok = true;
        let limit = Duration::from_secs(180);
        let mut check = |seed: u64, name: &str, t: &Trained, floor: f64| {
            let pass = t.val_accuracy >= floor && t.elapsed < limit;
            ok &= pass;
            lines.push(format!(
                "seed {seed} {name} {:.4} ({} epochs, {})",
                t.val_accuracy,
                t.epochs,
                secs(t.elapsed)
            ));
        };
        check(42, "non-negative", &plus42, 0.95);
        check(42, "unconstrained", &unc42, 0.97);
        for seed in [43, 44] {
            let d = dataset(seed);
            let plus = train_model(&d, seed, true, true);
            check(seed, "non-negative", &plus, 0.95);
            let unc = train_model(&d, seed, false, false);
            check(seed, "unconstrained", &unc, 0.97);
            extra.push((seed, plus.model));
        }
        report(
            4,
            "validation accuracy floors and per-model training time",
            Outcome::new(ok, lines.join("; ")),
        );
    }

    // criterion 9
    {
        let mut models: Vec<(&str, &ModelParams)> = vec![
            ("seed 42 non-negative", &plus42.model),
            ("seed 42 GCN-only", &gcnp42.model),
        ];
        let names = ["seed 43 non-negative", "seed 44 non-negative"];
        for ((_, m), name) in extra.iter().zip(names) {
            models.push((name, m));
        }
        report(
            9,
            "governed weights are exactly non-negative after training",
            projection_audit(&models),
        );
    }

    results.sort_by_key(|r| r.0);
    println!();
    println!("summary:");
    for (id, name, o) in &results {
        println!(
            "  criterion {id}: {} - {name}",
            if o.passed { "PASS" } else { "FAIL" }
        );
    }
    let failed = results.iter().filter(|r| !r.2.passed).count();
    println!(
        "{} of {} criteria passed",
        results.len() - failed,
        results.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
