//! Deterministic synthetic corpus of labeled call graphs.
//!
//! Benign graphs draw every token from the benign and shared pools. Malware
//! graphs mark a fraction of their functions as infected; tokens of infected
//! functions come from the malicious pool with a fixed probability. Pools are
//! disjoint by construction (distinct name prefixes).

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::digest::mix_seed;
use crate::error::{Error, Result};
use crate::fcg::{Corpus, Fcg, FunctionNode, Label};
use crate::featurize::{node_tokens, TokenKind};
use crate::robustness::BenignPool;

pub const GENERATOR_VERSION: &str = "synth-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSizes {
    pub benign_apis: usize,
    pub benign_strings: usize,
    pub malicious_apis: usize,
    pub malicious_strings: usize,
    pub shared_apis: usize,
    pub shared_strings: usize,
}

impl Default for PoolSizes {
    fn default() -> Self {
        PoolSizes {
            benign_apis: 300,
            benign_strings: 300,
            malicious_apis: 300,
            malicious_strings: 300,
            shared_apis: 200,
            shared_strings: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_benign: usize,
    pub n_malware: usize,
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub pools: PoolSizes,
    /// Probability that a token of an infected malware function is malicious.
    pub malicious_token_fraction: f64,
    /// Fraction of a malware graph's functions that are infected.
    pub infected_node_fraction: f64,
    /// Extra random edges per node on top of the spanning tree.
    pub extra_edge_factor: f64,
    pub min_tokens_per_node: usize,
    pub max_tokens_per_node: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_benign: 1500,
            n_malware: 1500,
            min_nodes: 5,
            max_nodes: 200,
            pools: PoolSizes::default(),
            malicious_token_fraction: 0.6,
            infected_node_fraction: 0.3,
            extra_edge_factor: 0.5,
            min_tokens_per_node: 1,
            max_tokens_per_node: 15,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.min_nodes < 1 || self.max_nodes < self.min_nodes {
            return bad("node range must satisfy max >= min >= 1");
        }
        if self.min_tokens_per_node < 1 || self.max_tokens_per_node < self.min_tokens_per_node {
            return bad("token range must satisfy max >= min >= 1");
        }
        for f in [self.malicious_token_fraction, self.infected_node_fraction] {
            if !(f > 0.0 && f <= 1.0) {
                return bad("fractions must be in (0, 1]");
            }
        }
        if !(self.extra_edge_factor >= 0.0 && self.extra_edge_factor.is_finite()) {
            return bad("extra_edge_factor must be >= 0");
        }
        let p = &self.pools;
        if p.benign_apis + p.shared_apis == 0 || p.benign_strings + p.shared_strings == 0 {
            return bad("benign+shared pools must be non-empty for both kinds");
        }
        if self.n_malware > 0 && (p.malicious_apis == 0 || p.malicious_strings == 0) {
            return bad("malicious pools must be non-empty");
        }
        Ok(())
    }
}

struct Pools {
    /// benign + shared, per kind
    clean_apis: Vec<String>,
    clean_strings: Vec<String>,
    malicious_apis: Vec<String>,
    malicious_strings: Vec<String>,
}

fn names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i:03}")).collect()
}

impl Pools {
    fn new(sizes: &PoolSizes) -> Self {
        let mut clean_apis = names("api_b_", sizes.benign_apis);
        clean_apis.extend(names("api_s_", sizes.shared_apis));
        let mut clean_strings = names("str_b_", sizes.benign_strings);
        clean_strings.extend(names("str_s_", sizes.shared_strings));
        Pools {
            clean_apis,
            clean_strings,
            malicious_apis: names("api_m_", sizes.malicious_apis),
            malicious_strings: names("str_m_", sizes.malicious_strings),
        }
    }
}

/// Log-uniform node count on `[min, max]`: many small graphs, a long tail.
fn node_count<R: Rng>(rng: &mut R, min: usize, max: usize) -> usize {
    let lo = (min as f64).ln();
    let hi = ((max + 1) as f64).ln();
    let n = rng.gen_range(lo..hi).exp().floor() as usize;
    n.clamp(min, max)
}

/// Uniform random labeled tree via a Prüfer sequence, oriented away from
/// node 0; edges in breadth-first order.
fn random_tree<R: Rng>(rng: &mut R, n: usize) -> Vec<(usize, usize)> {
    if n < 2 {
        return Vec::new();
    }
    let mut undirected = Vec::with_capacity(n - 1);
    if n == 2 {
        undirected.push((0, 1));
    } else {
        let prufer: Vec<usize> = (0..n - 2).map(|_| rng.gen_range(0..n)).collect();
        let mut degree = vec![1usize; n];
        for &v in &prufer {
            degree[v] += 1;
        }
        let mut leaves: std::collections::BTreeSet<usize> =
            (0..n).filter(|&v| degree[v] == 1).collect();
        for &v in &prufer {
            let leaf = *leaves.iter().next().expect("a tree always has a leaf");
            leaves.remove(&leaf);
            undirected.push((leaf, v));
            degree[v] -= 1;
            if degree[v] == 1 {
                leaves.insert(v);
            }
        }
        let rest: Vec<usize> = leaves.into_iter().collect();
        undirected.push((rest[0], rest[1]));
    }

    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(a, b) in &undirected {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut edges = Vec::with_capacity(n - 1);
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    while let Some(u) = queue.pop_front() {
        let mut children = adj[u].clone();
        children.sort_unstable();
        for v in children {
            if !seen[v] {
                seen[v] = true;
                edges.push((u, v));
                queue.push_back(v);
            }
        }
    }
    edges
}

fn generate_graph(cfg: &SynthConfig, pools: &Pools, index_in_corpus: usize, label: Label) -> Fcg {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(
        cfg.seed,
        &[b"graph", &(index_in_corpus as u64).to_le_bytes()],
    ));
    let n = node_count(&mut rng, cfg.min_nodes, cfg.max_nodes);
    let ids: Vec<String> = (0..n)
        .map(|i| {
            if i == 0 {
                "main".to_string()
            } else {
                format!("sub_{i:03}")
            }
        })
        .collect();

    let mut edges = random_tree(&mut rng, n);
    if n >= 2 {
        let mut present: HashSet<(usize, usize)> = edges.iter().copied().collect();
        let target = (cfg.extra_edge_factor * n as f64).round() as usize;
        let mut added = 0;
        let mut attempts = 0;
        while added < target && attempts < 20 * target {
            attempts += 1;
            let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
            if a != b && present.insert((a, b)) {
                edges.push((a, b));
                added += 1;
            }
        }
    }

    let infected: HashSet<usize> = match label {
        Label::Benign => HashSet::new(),
        Label::Malware => {
            let k = ((cfg.infected_node_fraction * n as f64).ceil() as usize).clamp(1, n);
            index::sample(&mut rng, n, k).into_iter().collect()
        }
    };

    let nodes = ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let mut node = FunctionNode::new(id.clone());
            let count = rng.gen_range(cfg.min_tokens_per_node..=cfg.max_tokens_per_node);
            for _ in 0..count {
                let is_api = rng.gen_bool(0.5);
                let malicious = infected.contains(&i) && rng.gen_bool(cfg.malicious_token_fraction);
                let source = match (is_api, malicious) {
                    (true, true) => &pools.malicious_apis,
                    (true, false) => &pools.clean_apis,
                    (false, true) => &pools.malicious_strings,
                    (false, false) => &pools.clean_strings,
                };
                let token = source
                    .choose(&mut rng)
                    .expect("pools validated non-empty")
                    .clone();
                if is_api {
                    node.apis.push(token);
                } else {
                    node.strings.push(token);
                }
            }
            node
        })
        .collect();

    Fcg {
        graph_id: format!("synth-{}-{index_in_corpus:05}", cfg.seed),
        label: Some(label),
        main_id: ids[0].clone(),
        nodes,
        edges: edges
            .into_iter()
            .map(|(a, b)| (ids[a].clone(), ids[b].clone()))
            .collect(),
    }
}

/// Generates the corpus (labels in shuffled order) and the benign+shared
/// token pool an attacker would inject from.
pub fn generate_corpus(cfg: &SynthConfig) -> Result<(Corpus, BenignPool)> {
    cfg.validate()?;
    let pools = Pools::new(&cfg.pools);
    let mut labels = vec![Label::Benign; cfg.n_benign];
    labels.extend(std::iter::repeat_n(Label::Malware, cfg.n_malware));
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(
        cfg.seed,
        &[b"labels"],
    )));

    let records = labels
        .iter()
        .enumerate()
        .map(|(i, &label)| generate_graph(cfg, &pools, i, label))
        .collect();
    let mut provenance = BTreeMap::new();
    provenance.insert("source".into(), "synth".into());
    provenance.insert("seed".into(), cfg.seed.to_string());
    provenance.insert("generator".into(), GENERATOR_VERSION.into());
    let corpus = Corpus {
        records,
        provenance,
    };
    let pool = BenignPool::new(pools.clean_apis, pools.clean_strings)?;
    Ok((corpus, pool))
}

/// Seeded train/validation/test style split used by the tooling, so a
/// corpus seed fully determines every split.
pub fn split_corpus(corpus: &Corpus, sizes: &[usize], seed: u64) -> Result<Vec<Corpus>> {
    corpus.split(sizes, mix_seed(seed, &[b"split"]))
}

/// Top `top_k` most frequent normalized tokens per kind among benign graphs;
/// ties broken lexicographically.
pub fn derive_benign_pool(corpus: &Corpus, top_k: usize) -> Result<BenignPool> {
    let benign: Vec<&Fcg> = corpus
        .records
        .iter()
        .filter(|g| g.label == Some(Label::Benign))
        .collect();
    if benign.is_empty() {
        return Err(Error::InvalidCorpus(
            "no benign graphs to derive a pool from".into(),
        ));
    }
    let top = |kind: TokenKind| {
        let mut freq: HashMap<String, usize> = HashMap::new();
        for g in &benign {
            for node in &g.nodes {
                let raw = match kind {
                    TokenKind::Api => &node.apis,
                    TokenKind::String => &node.strings,
                };
                for t in node_tokens(raw, kind) {
                    *freq.entry(t).or_default() += 1;
                }
            }
        }
        let mut ranked: Vec<(String, usize)> = freq.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.truncate(top_k);
        ranked.into_iter().map(|(t, _)| t).collect::<Vec<_>>()
    };
    BenignPool::new(top(TokenKind::Api), top(TokenKind::String))
}

/// JSON manifest describing how a corpus was generated.
pub fn manifest(cfg: &SynthConfig, extra: &BTreeMap<String, String>) -> String {
    let value = serde_json::json!({
        "generator": GENERATOR_VERSION,
        "tool_version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.seed,
        "config": cfg,
        "outputs": extra,
    });
    serde_json::to_string_pretty(&value).expect("manifest serializes")
}
