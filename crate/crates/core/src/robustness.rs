//! Additive evasion attacks at graph level and robustness measurement.
//!
//! An attack only ever adds: benign tokens appended to existing functions,
//! and never-called ("dead") functions full of benign tokens attached from an
//! existing function. The overhead of an attack is the number of injected
//! tokens relative to the graph's original token count.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::digest::mix_seed;
use crate::error::{Error, Result};
use crate::fcg::{normalize_fcg, Corpus, Fcg, FunctionNode, Label};
use crate::featurize::{
    escape_field, normalize_token, parse_params, unescape_field, TokenKind, Vocabulary,
};
use crate::gcn::{EmbeddedGraph, ModelParams};

/// Scores below this are classified benign.
pub const THRESHOLD: f64 = 0.5;
/// Float slack allowed by the monotonicity check.
pub const MONOTONE_SLACK: f64 = 1e-9;
pub const GRADIENT_SLACK: f64 = 1e-12;

const POOL_MAGIC: &str = "#monogcn-pool v1";
const ATTACK_MAGIC: &str = "#monogcn-attack v1";

/// Benign tokens an attacker injects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenignPool {
    pub apis: Vec<String>,
    pub strings: Vec<String>,
    /// Sampling weights, APIs first then strings. Uniform when absent.
    pub weights: Option<Vec<f64>>,
}

impl BenignPool {
    pub fn new(apis: Vec<String>, strings: Vec<String>) -> Result<Self> {
        let pool = BenignPool {
            apis,
            strings,
            weights: None,
        };
        pool.validate()?;
        Ok(pool)
    }

    pub fn len(&self) -> usize {
        self.apis.len() + self.strings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyPool);
        }
        for (kind, tokens) in [
            (TokenKind::Api, &self.apis),
            (TokenKind::String, &self.strings),
        ] {
            for t in tokens {
                if normalize_token(t, kind).as_deref() != Some(t.as_str()) {
                    return Err(Error::InvalidConfig(format!(
                        "pool {kind} token `{t}` is not in normalized form"
                    )));
                }
            }
        }
        if let Some(w) = &self.weights {
            if w.len() != self.len() || w.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
                return Err(Error::InvalidConfig(
                    "pool weights must be one finite non-negative value per token".into(),
                ));
            }
        }
        Ok(())
    }

    fn draw<R: Rng>(
        &self,
        rng: &mut R,
        weighted: Option<&WeightedIndex<f64>>,
    ) -> (TokenKind, String) {
        let i = match weighted {
            Some(w) => w.sample(rng),
            None => rng.gen_range(0..self.len()),
        };
        if i < self.apis.len() {
            (TokenKind::Api, self.apis[i].clone())
        } else {
            (TokenKind::String, self.strings[i - self.apis.len()].clone())
        }
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "{POOL_MAGIC} apis={} strings={}",
            self.apis.len(),
            self.strings.len()
        )?;
        let kinds = self
            .apis
            .iter()
            .map(|t| ("api", t))
            .chain(self.strings.iter().map(|t| ("string", t)));
        for (i, (kind, t)) in kinds.enumerate() {
            match &self.weights {
                Some(w) => writeln!(out, "{kind}\t{}\t{}", escape_field(t), w[i])?,
                None => writeln!(out, "{kind}\t{}", escape_field(t))?,
            }
        }
        out.flush()
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("pool is UTF-8")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::format(1, "empty pool file"))?;
        let rest = header
            .strip_prefix(POOL_MAGIC)
            .ok_or_else(|| Error::format(1, format!("expected header `{POOL_MAGIC} ...`")))?;
        parse_params(rest, 1)?;
        let mut apis = Vec::new();
        let mut strings = Vec::new();
        let mut weights = Vec::new();
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            let lineno = i + 1;
            let fields: Vec<&str> = line.split('\t').collect();
            if !(2..=3).contains(&fields.len()) {
                return Err(Error::format(
                    lineno,
                    "expected kind<TAB>token[<TAB>weight]",
                ));
            }
            let token = unescape_field(fields[1]).map_err(|m| Error::format(lineno, m))?;
            match TokenKind::parse(fields[0]) {
                Some(TokenKind::Api) if !strings.is_empty() => {
                    return Err(Error::format(lineno, "api row after string rows"))
                }
                Some(TokenKind::Api) => apis.push(token),
                Some(TokenKind::String) => strings.push(token),
                None => {
                    return Err(Error::format(
                        lineno,
                        format!("unknown kind `{}`", fields[0]),
                    ))
                }
            }
            if let Some(w) = fields.get(2) {
                weights.push(
                    w.parse::<f64>()
                        .map_err(|_| Error::format(lineno, format!("bad weight `{w}`")))?,
                );
            }
        }
        let n = apis.len() + strings.len();
        let weights = match weights.len() {
            0 => None,
            k if k == n => Some(weights),
            _ => {
                return Err(Error::format(
                    1,
                    "weights must be given for all rows or none",
                ))
            }
        };
        let pool = BenignPool {
            apis,
            strings,
            weights,
        };
        pool.validate()?;
        Ok(pool)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMode {
    InjectExisting,
    AddDeadNodes,
}

impl fmt::Display for AttackMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackMode::InjectExisting => "inject_existing",
            AttackMode::AddDeadNodes => "add_dead_nodes",
        })
    }
}

impl FromStr for AttackMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "inject_existing" => Ok(AttackMode::InjectExisting),
            "add_dead_nodes" => Ok(AttackMode::AddDeadNodes),
            other => Err(format!(
                "unknown attack mode `{other}` (expected inject_existing|add_dead_nodes)"
            )),
        }
    }
}

/// Which existing functions receive injected tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetNodes {
    All,
    RandomFraction(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    /// Percent overheads, ascending.
    pub overheads: Vec<f64>,
    pub modes: Vec<AttackMode>,
    pub seed: u64,
    pub trials_per_sample: usize,
    pub target_nodes: TargetNodes,
    pub tokens_per_dead_node: usize,
    /// Overheads robust accuracy is computed over; all positive overheads of
    /// the schedule when absent.
    pub reference_overheads: Option<Vec<f64>>,
    /// Stop a sample's sweep at its first evading overhead; later overheads
    /// repeat that result.
    pub early_stop: bool,
}

pub const DEFAULT_OVERHEADS: [f64; 12] = [
    0.0, 5.0, 10.0, 20.0, 30.0, 40.0, 50.0, 100.0, 150.0, 200.0, 400.0, 500.0,
];

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            overheads: DEFAULT_OVERHEADS.to_vec(),
            modes: vec![AttackMode::InjectExisting, AttackMode::AddDeadNodes],
            seed: 0,
            trials_per_sample: 1,
            target_nodes: TargetNodes::RandomFraction(0.5),
            tokens_per_dead_node: 20,
            reference_overheads: None,
            early_stop: false,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() {
            return Err(Error::InvalidConfig(
                "attack modes must be non-empty".into(),
            ));
        }
        if self.overheads.iter().any(|&o| !(o >= 0.0 && o.is_finite())) {
            return Err(Error::InvalidConfig(
                "overheads must be finite and non-negative".into(),
            ));
        }
        if self.overheads.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidConfig("overheads must be ascending".into()));
        }
        if self.trials_per_sample == 0 || self.tokens_per_dead_node == 0 {
            return Err(Error::InvalidConfig(
                "trials_per_sample and tokens_per_dead_node must be >= 1".into(),
            ));
        }
        if let TargetNodes::RandomFraction(f) = self.target_nodes {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::InvalidConfig(
                    "target fraction must be in (0, 1]".into(),
                ));
            }
        }
        Ok(())
    }

    fn has_mode(&self, mode: AttackMode) -> bool {
        self.modes.contains(&mode)
    }

    pub fn reference(&self) -> Vec<f64> {
        self.reference_overheads.clone().unwrap_or_else(|| {
            self.overheads
                .iter()
                .copied()
                .filter(|&o| o > 0.0)
                .collect()
        })
    }
}

/// Additions to a graph. Nothing is ever removed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Perturbation {
    /// Node id to (added API tokens, added string tokens).
    pub token_additions: BTreeMap<String, (Vec<String>, Vec<String>)>,
    pub new_nodes: Vec<FunctionNode>,
    /// `(caller, new node)` attachment edges.
    pub new_edges: Vec<(String, String)>,
}

impl Perturbation {
    pub fn is_empty(&self) -> bool {
        self.token_additions.is_empty() && self.new_nodes.is_empty() && self.new_edges.is_empty()
    }

    pub fn injected_tokens(&self) -> usize {
        self.token_additions
            .values()
            .map(|(a, s)| a.len() + s.len())
            .sum::<usize>()
            + self
                .new_nodes
                .iter()
                .map(FunctionNode::token_count)
                .sum::<usize>()
    }
}

/// Returns a copy of `g` with the perturbation applied; label preserved.
pub fn apply_perturbation(g: &Fcg, p: &Perturbation) -> Result<Fcg> {
    let mut out = g.clone();
    let index = g.node_index();
    for (id, (apis, strings)) in &p.token_additions {
        let &i = index
            .get(id.as_str())
            .ok_or_else(|| Error::UnknownNode(id.clone()))?;
        out.nodes[i].apis.extend(apis.iter().cloned());
        out.nodes[i].strings.extend(strings.iter().cloned());
    }
    let mut new_ids = HashSet::new();
    for node in &p.new_nodes {
        if index.contains_key(node.id.as_str()) || !new_ids.insert(node.id.as_str()) {
            return Err(Error::InvalidConfig(format!(
                "new node id {} is not unique",
                node.id
            )));
        }
    }
    for (caller, callee) in &p.new_edges {
        if !index.contains_key(caller.as_str()) && !new_ids.contains(caller.as_str()) {
            return Err(Error::UnknownNode(caller.clone()));
        }
        if !new_ids.contains(callee.as_str()) {
            return Err(Error::UnknownNode(callee.clone()));
        }
    }
    out.nodes.extend(p.new_nodes.iter().cloned());
    out.edges.extend(p.new_edges.iter().cloned());
    Ok(out)
}

fn push_token(target: &mut (Vec<String>, Vec<String>), (kind, token): (TokenKind, String)) {
    match kind {
        TokenKind::Api => target.0.push(token),
        TokenKind::String => target.1.push(token),
    }
}

/// Builds the additive perturbation for one overhead level.
///
/// The injected token budget is `round(overhead_pct / 100 * tokens(g))`.
/// With both modes enabled the budget is split evenly (odd token to the
/// in-place injection). Each mode draws from its own seeded stream, so for a
/// fixed seed a larger budget yields a superset of a smaller one's additions.
pub fn generate_attack(
    g: &Fcg,
    pool: &BenignPool,
    overhead_pct: f64,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<Perturbation> {
    if !(overhead_pct >= 0.0 && overhead_pct.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "overhead {overhead_pct} must be >= 0"
        )));
    }
    cfg.validate()?;
    let budget = (overhead_pct / 100.0 * g.token_count() as f64).round() as usize;
    if budget == 0 {
        return Ok(Perturbation::default());
    }
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    if g.nodes.is_empty() {
        return Err(Error::InvalidGraph {
            graph_id: g.graph_id.clone(),
            violations: "graph has no nodes".into(),
        });
    }
    let weighted = match &pool.weights {
        Some(w) => Some(
            WeightedIndex::new(w)
                .map_err(|e| Error::InvalidConfig(format!("pool weights: {e}")))?,
        ),
        None => None,
    };

    let inject = cfg.has_mode(AttackMode::InjectExisting);
    let dead = cfg.has_mode(AttackMode::AddDeadNodes);
    let (inject_budget, dead_budget) = match (inject, dead) {
        (true, true) => (budget - budget / 2, budget / 2),
        (true, false) => (budget, 0),
        (false, _) => (0, budget),
    };

    let mut p = Perturbation::default();
    let n = g.nodes.len();

    if inject_budget > 0 {
        let mut target_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[b"targets"]));
        let targets: Vec<usize> = match cfg.target_nodes {
            TargetNodes::All => (0..n).collect(),
            TargetNodes::RandomFraction(f) => {
                let k = ((f * n as f64).ceil() as usize).clamp(1, n);
                let mut t = index::sample(&mut target_rng, n, k).into_vec();
                t.sort_unstable();
                t
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[b"inject"]));
        for _ in 0..inject_budget {
            let node = targets[rng.gen_range(0..targets.len())];
            let token = pool.draw(&mut rng, weighted.as_ref());
            let entry = p
                .token_additions
                .entry(g.nodes[node].id.clone())
                .or_default();
            push_token(entry, token);
        }
    }

    if dead_budget > 0 {
        let taken: HashSet<&str> = g.nodes.iter().map(|n| n.id.as_str()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[b"dead"]));
        let mut remaining = dead_budget;
        let mut k = 0;
        while remaining > 0 {
            let mut id = format!("adv_dead_{k}");
            while taken.contains(id.as_str()) {
                id.push('_');
            }
            let caller = g.nodes[rng.gen_range(0..n)].id.clone();
            let mut tokens = (Vec::new(), Vec::new());
            let size = remaining.min(cfg.tokens_per_dead_node);
            for _ in 0..size {
                push_token(&mut tokens, pool.draw(&mut rng, weighted.as_ref()));
            }
            remaining -= size;
            p.new_nodes.push(FunctionNode {
                id: id.clone(),
                apis: tokens.0,
                strings: tokens.1,
            });
            p.new_edges.push((caller, id));
            k += 1;
        }
    }
    Ok(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRow {
    pub graph_id: String,
    pub overhead_pct: f64,
    pub original_score: f64,
    pub adv_score: f64,
    pub evaded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub overhead_pct: f64,
    pub evaded: usize,
    /// Samples originally classified malware.
    pub eligible: usize,
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustAccuracy {
    pub reference_overheads: Vec<f64>,
    /// Over all samples.
    pub overall: Option<f64>,
    pub overall_count: usize,
    /// Over samples originally classified malware.
    pub conditioned: Option<f64>,
    pub conditioned_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub rows: Vec<AttackRow>,
    pub curve: Vec<CurvePoint>,
    pub robust_accuracy: RobustAccuracy,
    pub samples: usize,
    pub originally_detected: usize,
}

impl AttackReport {
    pub fn rows_at(&self, overhead: f64) -> impl Iterator<Item = &AttackRow> {
        self.rows.iter().filter(move |r| r.overhead_pct == overhead)
    }

    pub fn total_evasions(&self) -> usize {
        self.rows.iter().filter(|r| r.evaded).count()
    }

    /// Tab-separated table with a metadata preamble and a summary section.
    pub fn write_table<W: Write>(
        &self,
        meta: &BTreeMap<String, String>,
        mut out: W,
    ) -> std::io::Result<()> {
        writeln!(out, "{ATTACK_MAGIC}")?;
        for (k, v) in meta {
            writeln!(out, "#meta\t{}\t{}", escape_field(k), escape_field(v))?;
        }
        writeln!(
            out,
            "graph_id\toverhead_pct\toriginal_score\tadv_score\tevaded"
        )?;
        for r in &self.rows {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                escape_field(&r.graph_id),
                r.overhead_pct,
                r.original_score,
                r.adv_score,
                r.evaded
            )?;
        }
        writeln!(out, "#summary\tsamples\t{}", self.samples)?;
        writeln!(
            out,
            "#summary\toriginally_detected\t{}",
            self.originally_detected
        )?;
        for c in &self.curve {
            writeln!(
                out,
                "#curve\t{}\t{}\t{}\t{}",
                c.overhead_pct, c.success_rate, c.evaded, c.eligible
            )?;
        }
        let ra = &self.robust_accuracy;
        let refs: Vec<String> = ra
            .reference_overheads
            .iter()
            .map(|o| o.to_string())
            .collect();
        writeln!(
            out,
            "#robust_accuracy\treference_overheads\t{}",
            refs.join(",")
        )?;
        let fmt_opt = |v: Option<f64>| v.map_or("NA".to_string(), |x| x.to_string());
        writeln!(
            out,
            "#robust_accuracy\toverall\t{}\t{}",
            fmt_opt(ra.overall),
            ra.overall_count
        )?;
        writeln!(
            out,
            "#robust_accuracy\tconditioned\t{}\t{}",
            fmt_opt(ra.conditioned),
            ra.conditioned_count
        )?;
        out.flush()
    }

    pub fn to_table(&self, meta: &BTreeMap<String, String>) -> String {
        let mut buf = Vec::new();
        self.write_table(meta, &mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("table is UTF-8")
    }

    /// Reads back the per-row section of a table written by [`write_table`](Self::write_table).
    pub fn parse_rows(text: &str) -> Result<Vec<AttackRow>> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == ATTACK_MAGIC => {}
            _ => return Err(Error::format(1, format!("expected `{ATTACK_MAGIC}`"))),
        }
        let mut rows = Vec::new();
        for (i, line) in lines {
            if line.starts_with('#') || line.starts_with("graph_id\t") || line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            let bad = |what: &str| Error::format(i + 1, format!("bad {what}"));
            if f.len() != 5 {
                return Err(bad("row"));
            }
            rows.push(AttackRow {
                graph_id: unescape_field(f[0]).map_err(|m| Error::format(i + 1, m))?,
                overhead_pct: f[1].parse().map_err(|_| bad("overhead"))?,
                original_score: f[2].parse().map_err(|_| bad("original score"))?,
                adv_score: f[3].parse().map_err(|_| bad("adversarial score"))?,
                evaded: f[4].parse().map_err(|_| bad("evaded flag"))?,
            });
        }
        Ok(rows)
    }
}

struct SampleOutcome {
    rows: Vec<AttackRow>,
    detected: bool,
}

fn attack_sample(
    model: &ModelParams,
    vocab: &Vocabulary,
    g: &Fcg,
    pool: &BenignPool,
    cfg: &AttackConfig,
) -> Result<SampleOutcome> {
    let g = normalize_fcg(g)?;
    let base = EmbeddedGraph::from_normalized(&g, vocab);
    let original = model.score(&base.adj, &base.x)?;
    let detected = original >= THRESHOLD;
    let mut rows = Vec::with_capacity(cfg.overheads.len());
    let mut stopped: Option<f64> = None;
    for &overhead in &cfg.overheads {
        let adv_score = match stopped {
            Some(score) => score,
            None => {
                let mut worst = f64::INFINITY;
                for trial in 0..cfg.trials_per_sample {
                    let seed = mix_seed(
                        cfg.seed,
                        &[g.graph_id.as_bytes(), &(trial as u64).to_le_bytes()],
                    );
                    let p = generate_attack(&g, pool, overhead, cfg, seed)?;
                    let score = if p.is_empty() {
                        original
                    } else {
                        let adv = apply_perturbation(&g, &p)?;
                        let e = EmbeddedGraph::from_normalized(&adv, vocab);
                        model.score(&e.adj, &e.x)?
                    };
                    worst = worst.min(score);
                }
                worst
            }
        };
        let evaded = detected && adv_score < THRESHOLD;
        if evaded && cfg.early_stop {
            stopped = Some(adv_score);
        }
        rows.push(AttackRow {
            graph_id: g.graph_id.clone(),
            overhead_pct: overhead,
            original_score: original,
            adv_score,
            evaded,
        });
    }
    Ok(SampleOutcome { rows, detected })
}

/// Attacks every malware sample at every overhead of the schedule. With
/// several trials per sample, the lowest adversarial score is kept.
pub fn attack_sweep(
    model: &ModelParams,
    vocab: &Vocabulary,
    malware: &Corpus,
    pool: &BenignPool,
    cfg: &AttackConfig,
) -> Result<AttackReport> {
    cfg.validate()?;
    if let Some(i) = malware
        .records
        .iter()
        .position(|g| g.label != Some(Label::Malware))
    {
        return Err(Error::InvalidCorpus(format!(
            "record {} (graph_id {}) is not labeled malware",
            i + 1,
            malware.records[i].graph_id
        )));
    }
    let outcomes: Vec<SampleOutcome> = malware
        .records
        .par_iter()
        .map(|g| attack_sample(model, vocab, g, pool, cfg))
        .collect::<Result<_>>()?;

    let samples = outcomes.len();
    let eligible = outcomes.iter().filter(|o| o.detected).count();
    let curve = cfg
        .overheads
        .iter()
        .enumerate()
        .map(|(k, &overhead)| {
            let evaded = outcomes.iter().filter(|o| o.rows[k].evaded).count();
            CurvePoint {
                overhead_pct: overhead,
                evaded,
                eligible,
                success_rate: if eligible == 0 {
                    0.0
                } else {
                    evaded as f64 / eligible as f64
                },
            }
        })
        .collect();

    let reference = cfg.reference();
    let mut overall = (0usize, 0usize);
    let mut conditioned = (0usize, 0usize);
    for o in &outcomes {
        for r in o
            .rows
            .iter()
            .filter(|r| reference.contains(&r.overhead_pct))
        {
            let still_detected = (r.adv_score >= THRESHOLD) as usize;
            overall.0 += still_detected;
            overall.1 += 1;
            if o.detected {
                conditioned.0 += still_detected;
                conditioned.1 += 1;
            }
        }
    }
    let ratio = |(hit, total): (usize, usize)| (total > 0).then(|| hit as f64 / total as f64);

    Ok(AttackReport {
        rows: outcomes.into_iter().flat_map(|o| o.rows).collect(),
        curve,
        robust_accuracy: RobustAccuracy {
            reference_overheads: reference,
            overall: ratio(overall),
            overall_count: overall.1,
            conditioned: ratio(conditioned),
            conditioned_count: conditioned.1,
        },
        samples,
        originally_detected: eligible,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityViolation {
    pub trial: usize,
    pub graph_id: String,
    pub before: f64,
    pub after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub trials: usize,
    /// Set when the model is not fully non-negative, so violations are
    /// findings about the model rather than a broken guarantee.
    pub informational: bool,
    pub violations: Vec<MonotonicityViolation>,
    /// Largest score drop observed (0 when none).
    pub max_violation: f64,
    pub graphs_audited: usize,
    pub min_input_gradient: f64,
    pub gradient_violations: usize,
}

impl MonotonicityReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty() && self.gradient_violations == 0
    }
}

/// Feature additions as `(node, feature, count)` entries.
type Delta = Vec<(usize, usize, u32)>;

/// Adds `delta` to a copy of `x`.
pub fn perturb_features(
    x: &crate::featurize::FeatureMatrix,
    delta: &[(usize, usize, u32)],
) -> crate::featurize::FeatureMatrix {
    let mut out = x.clone();
    for &(i, j, c) in delta {
        out.add(i, j, c);
    }
    out
}

/// Random non-negative integer perturbations of existing nodes' features,
/// plus an input-gradient sign audit on every graph.
pub fn check_monotonicity(
    model: &ModelParams,
    vocab: &Vocabulary,
    corpus: &Corpus,
    trials: usize,
    seed: u64,
) -> Result<MonotonicityReport> {
    let graphs = EmbeddedGraph::embed_corpus(corpus, vocab)?;
    let informational = !(model.nonneg_gcn && model.nonneg_gclf && model.is_fully_nonnegative());

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plans: Vec<(usize, Delta)> = if graphs.is_empty() || vocab.dim() == 0 {
        Vec::new()
    } else {
        (0..trials)
            .map(|_| {
                let gi = rng.gen_range(0..graphs.len());
                let n = graphs[gi].x.n();
                let entries = rng.gen_range(1..=8);
                let delta = (0..entries)
                    .map(|_| {
                        (
                            rng.gen_range(0..n),
                            rng.gen_range(0..vocab.dim()),
                            rng.gen_range(1..=5),
                        )
                    })
                    .collect();
                (gi, delta)
            })
            .collect()
    };

    let outcomes: Vec<(usize, f64, f64)> = plans
        .par_iter()
        .map(|(gi, delta)| {
            let e = &graphs[*gi];
            let before = model.score(&e.adj, &e.x)?;
            let after = model.score(&e.adj, &perturb_features(&e.x, delta))?;
            Ok((*gi, before, after))
        })
        .collect::<Result<_>>()?;

    let mut violations = Vec::new();
    let mut max_violation: f64 = 0.0;
    for (trial, &(gi, before, after)) in outcomes.iter().enumerate() {
        max_violation = max_violation.max(before - after);
        if after < before - MONOTONE_SLACK {
            violations.push(MonotonicityViolation {
                trial,
                graph_id: graphs[gi].graph_id.clone(),
                before,
                after,
            });
        }
    }

    let gradient_mins: Vec<(f64, usize)> = graphs
        .par_iter()
        .map(|e| {
            let grad = model.input_gradient(&e.adj, &e.x)?;
            let min = grad.iter().copied().fold(f64::INFINITY, f64::min);
            let bad = grad.iter().filter(|&&v| v < -GRADIENT_SLACK).count();
            Ok((min, bad))
        })
        .collect::<Result<_>>()?;

    Ok(MonotonicityReport {
        trials: plans.len(),
        informational,
        violations,
        max_violation,
        graphs_audited: graphs.len(),
        min_input_gradient: gradient_mins
            .iter()
            .map(|m| m.0)
            .fold(f64::INFINITY, f64::min),
        gradient_violations: gradient_mins.iter().map(|m| m.1).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurize::embed_graph;

    fn pool() -> BenignPool {
        BenignPool::new(
            vec!["getwindowtexta".into(), "loadlibraryw".into()],
            vec!["microsoft corporation".into()],
        )
        .unwrap()
    }

    fn graph(tokens_per_node: usize, nodes: usize) -> Fcg {
        let nodes: Vec<FunctionNode> = (0..nodes)
            .map(|i| FunctionNode {
                id: if i == 0 {
                    "main".into()
                } else {
                    format!("f{i}")
                },
                apis: (0..tokens_per_node).map(|k| format!("api{k}")).collect(),
                strings: vec![],
            })
            .collect();
        let edges = (1..nodes.len())
            .map(|i| ("main".to_string(), format!("f{i}")))
            .collect();
        Fcg {
            graph_id: "g".into(),
            label: Some(Label::Malware),
            main_id: "main".into(),
            nodes,
            edges,
        }
    }

    #[test]
    fn zero_overhead_is_empty() {
        let p = generate_attack(&graph(4, 10), &pool(), 0.0, &AttackConfig::default(), 1).unwrap();
        assert!(p.is_empty());
        assert_eq!(apply_perturbation(&graph(4, 10), &p).unwrap(), graph(4, 10));
    }

    #[test]
    fn budget_is_proportional_to_tokens() {
        let g = graph(4, 10);
        for modes in [
            vec![AttackMode::InjectExisting],
            vec![AttackMode::AddDeadNodes],
            vec![AttackMode::InjectExisting, AttackMode::AddDeadNodes],
        ] {
            let cfg = AttackConfig {
                modes,
                ..AttackConfig::default()
            };
            let p = generate_attack(&g, &pool(), 100.0, &cfg, 3).unwrap();
            assert_eq!(p.injected_tokens(), 40);
        }
        let cfg = AttackConfig::default();
        let p = generate_attack(&g, &pool(), 12.5, &cfg, 3).unwrap();
        assert_eq!(p.injected_tokens(), 5);
    }

    #[test]
    fn dead_nodes_hold_twenty_tokens() {
        let g = graph(4, 10);
        let cfg = AttackConfig {
            modes: vec![AttackMode::AddDeadNodes],
            ..AttackConfig::default()
        };
        let p = generate_attack(&g, &pool(), 105.0, &cfg, 9).unwrap();
        assert_eq!(p.new_nodes.len(), 3);
        let sizes: Vec<usize> = p.new_nodes.iter().map(FunctionNode::token_count).collect();
        assert_eq!(sizes, vec![20, 20, 2]);
        let adv = apply_perturbation(&g, &p).unwrap();
        assert_eq!(adv.nodes.len(), 13);
        assert_eq!(adv.edges.len(), g.edges.len() + 3);
        assert!(crate::fcg::validate_fcg(&adv).is_ok());
        assert!(crate::fcg::validate_fcg(&adv).warnings.is_empty());
    }

    #[test]
    fn deterministic_per_seed() {
        let g = graph(3, 7);
        let cfg = AttackConfig::default();
        let a = generate_attack(&g, &pool(), 200.0, &cfg, 5).unwrap();
        let b = generate_attack(&g, &pool(), 200.0, &cfg, 5).unwrap();
        let c = generate_attack(&g, &pool(), 200.0, &cfg, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn single_token_injection_raises_one_count() {
        let g = graph(2, 3);
        let v = Vocabulary::new(vec![("getwindowtexta".into(), 1.0)], vec![], 1, 1).unwrap();
        let mut p = Perturbation::default();
        p.token_additions
            .insert("f1".into(), (vec!["getwindowtexta".into()], vec![]));
        let adv = apply_perturbation(&g, &p).unwrap();
        assert_eq!(adv.nodes[1].apis.len(), 3);
        let before = embed_graph(&g, &v);
        let after = embed_graph(&adv, &v);
        assert_eq!(after.get(1, 0), before.get(1, 0) + 1);
        assert_eq!(after.get(0, 0), before.get(0, 0));
    }

    #[test]
    fn unknown_node_is_rejected() {
        let mut p = Perturbation::default();
        p.token_additions
            .insert("nope".into(), (vec!["x".into()], vec![]));
        assert!(matches!(
            apply_perturbation(&graph(1, 2), &p),
            Err(Error::UnknownNode(_))
        ));
        let p = Perturbation {
            new_nodes: vec![FunctionNode::new("d")],
            new_edges: vec![("ghost".into(), "d".into())],
            ..Perturbation::default()
        };
        assert!(apply_perturbation(&graph(1, 2), &p).is_err());
    }

    #[test]
    fn empty_pool_with_budget_fails() {
        let empty = BenignPool {
            apis: vec![],
            strings: vec![],
            weights: None,
        };
        let cfg = AttackConfig::default();
        assert!(matches!(
            generate_attack(&graph(2, 2), &empty, 50.0, &cfg, 0),
            Err(Error::EmptyPool)
        ));
        assert!(generate_attack(&graph(2, 2), &empty, 0.0, &cfg, 0)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn pool_file_round_trip() {
        let mut p = pool();
        assert_eq!(BenignPool::parse(&p.to_text()).unwrap(), p);
        p.weights = Some(vec![1.0, 2.0, 0.5]);
        let text = p.to_text();
        assert!(text.starts_with("#monogcn-pool v1 apis=2 strings=1\n"));
        assert_eq!(BenignPool::parse(&text).unwrap(), p);
        assert!(BenignPool::parse("#monogcn-pool v1\napi\tX\n").is_err());
    }

    #[test]
    fn attack_config_validation() {
        let mut cfg = AttackConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.overheads = vec![10.0, 5.0];
        assert!(cfg.validate().is_err());
        let cfg = AttackConfig {
            modes: vec![],
            ..AttackConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert_eq!(
            "add_dead_nodes".parse::<AttackMode>().unwrap(),
            AttackMode::AddDeadNodes
        );
    }
}
