//! Token normalization, vocabulary selection and bag-of-words node features.
//!
//! The feature space is the concatenation of an API block followed by a
//! string block. Each node row counts how many times each vocabulary token
//! occurs among the node's normalized tokens.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::fcg::{Corpus, Fcg, Label};

pub const MAX_STRING_CHARS: usize = 30;
pub const MIN_STRING_CHARS: usize = 4;
pub const DEFAULT_K: usize = 500;
pub const DEFAULT_PREFILTER: usize = 5000;

const VOCAB_MAGIC: &str = "#monogcn-vocab v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TokenKind {
    Api,
    String,
}

impl TokenKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TokenKind::Api => "api",
            TokenKind::String => "string",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "api" => Some(TokenKind::Api),
            "string" => Some(TokenKind::String),
            _ => None,
        }
    }
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Lowercases a raw token. Strings shorter than four characters are dropped
/// and longer than thirty are truncated; lengths count Unicode scalar values
/// after lowercasing. Empty API names are dropped.
pub fn normalize_token(raw: &str, kind: TokenKind) -> Option<String> {
    let lower = raw.to_lowercase();
    match kind {
        TokenKind::Api => (!lower.is_empty()).then_some(lower),
        TokenKind::String => {
            let len = lower.chars().count();
            if len < MIN_STRING_CHARS {
                None
            } else if len > MAX_STRING_CHARS {
                Some(lower.chars().take(MAX_STRING_CHARS).collect())
            } else {
                Some(lower)
            }
        }
    }
}

/// Per-token statistics gathered over a labeled corpus.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TokenStats {
    /// Malware graphs containing the token at least once.
    pub malware_graphs: u64,
    /// Benign graphs containing the token at least once.
    pub benign_graphs: u64,
    /// Total occurrences over all graphs.
    pub occurrences: u64,
}

/// Importance measure used to rank candidate tokens.
pub trait TokenScorer {
    fn score(&self, stats: &TokenStats, n_malware: u64, n_benign: u64) -> f64;
}

/// Chi-squared statistic of the 2x2 table (token present/absent vs label).
#[derive(Debug, Clone, Copy, Default)]
pub struct ChiSquared;

impl TokenScorer for ChiSquared {
    fn score(&self, stats: &TokenStats, n_malware: u64, n_benign: u64) -> f64 {
        let a = stats.malware_graphs as f64;
        let b = stats.benign_graphs as f64;
        let c = (n_malware - stats.malware_graphs) as f64;
        let d = (n_benign - stats.benign_graphs) as f64;
        let n = a + b + c + d;
        let denom = (a + b) * (c + d) * (a + c) * (b + d);
        if denom == 0.0 {
            return 0.0;
        }
        let cross = a * d - b * c;
        n * cross * cross / denom
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SelectionConfig {
    /// Candidates kept per kind, by occurrence count, before scoring.
    pub prefilter: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            prefilter: DEFAULT_PREFILTER,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    pub api_tokens: Vec<String>,
    pub string_tokens: Vec<String>,
    pub api_scores: Vec<f64>,
    pub string_scores: Vec<f64>,
    /// Configured sizes; the token lists may be shorter when the corpus had
    /// fewer candidates.
    pub k_api: usize,
    pub k_str: usize,
    api_index: HashMap<String, usize>,
    string_index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new(
        api: Vec<(String, f64)>,
        strings: Vec<(String, f64)>,
        k_api: usize,
        k_str: usize,
    ) -> Result<Self> {
        if api.len() > k_api || strings.len() > k_str {
            return Err(Error::InvalidConfig(format!(
                "vocabulary has {}/{} tokens, more than k_api={k_api}/k_str={k_str}",
                api.len(),
                strings.len()
            )));
        }
        let (api_tokens, api_scores): (Vec<_>, Vec<_>) = api.into_iter().unzip();
        let (string_tokens, string_scores): (Vec<_>, Vec<_>) = strings.into_iter().unzip();
        let api_index = index_of(&api_tokens, TokenKind::Api)?;
        let string_index = index_of(&string_tokens, TokenKind::String)?;
        Ok(Vocabulary {
            api_tokens,
            string_tokens,
            api_scores,
            string_scores,
            k_api,
            k_str,
            api_index,
            string_index,
        })
    }

    /// Feature dimension: API block plus string block.
    pub fn dim(&self) -> usize {
        self.api_tokens.len() + self.string_tokens.len()
    }

    pub fn api_shortfall(&self) -> usize {
        self.k_api - self.api_tokens.len()
    }

    pub fn string_shortfall(&self) -> usize {
        self.k_str - self.string_tokens.len()
    }

    /// Feature index of an already-normalized token.
    pub fn index(&self, kind: TokenKind, token: &str) -> Option<usize> {
        match kind {
            TokenKind::Api => self.api_index.get(token).copied(),
            TokenKind::String => self
                .string_index
                .get(token)
                .map(|j| self.api_tokens.len() + j),
        }
    }

    /// Kind and token addressed by a feature index.
    pub fn token_at(&self, index: usize) -> Option<(TokenKind, &str)> {
        if index < self.api_tokens.len() {
            Some((TokenKind::Api, &self.api_tokens[index]))
        } else {
            self.string_tokens
                .get(index - self.api_tokens.len())
                .map(|t| (TokenKind::String, t.as_str()))
        }
    }

    /// SHA-256 over the feature layout (`kind\ttoken\n` per index, escaped).
    /// Scores do not participate: they do not change the feature space.
    pub fn content_hash(&self) -> String {
        let mut buf = String::new();
        for (kind, tokens) in [
            (TokenKind::Api, &self.api_tokens),
            (TokenKind::String, &self.string_tokens),
        ] {
            for t in tokens {
                buf.push_str(kind.as_str());
                buf.push('\t');
                buf.push_str(&escape_field(t));
                buf.push('\n');
            }
        }
        sha256_hex(buf.as_bytes())
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "{VOCAB_MAGIC} k_api={} k_str={}",
            self.k_api, self.k_str
        )?;
        for (t, s) in self.api_tokens.iter().zip(&self.api_scores) {
            writeln!(out, "api\t{}\t{}", escape_field(t), s)?;
        }
        for (t, s) in self.string_tokens.iter().zip(&self.string_scores) {
            writeln!(out, "string\t{}\t{}", escape_field(t), s)?;
        }
        out.flush()
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("vocabulary is UTF-8")
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
            .ok_or_else(|| Error::format(1, "empty vocabulary file"))?;
        let rest = header
            .strip_prefix(VOCAB_MAGIC)
            .ok_or_else(|| Error::format(1, format!("expected header `{VOCAB_MAGIC} ...`")))?;
        let params = parse_params(rest, 1)?;
        let k_api = param_usize(&params, "k_api", 1)?;
        let k_str = param_usize(&params, "k_str", 1)?;

        let mut api = Vec::new();
        let mut strings = Vec::new();
        for (i, line) in lines {
            let lineno = i + 1;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::format(lineno, "expected kind<TAB>token<TAB>score"));
            }
            let kind = TokenKind::parse(fields[0])
                .ok_or_else(|| Error::format(lineno, format!("unknown kind `{}`", fields[0])))?;
            let token = unescape_field(fields[1]).map_err(|m| Error::format(lineno, m))?;
            let score: f64 = fields[2]
                .parse()
                .map_err(|_| Error::format(lineno, format!("bad score `{}`", fields[2])))?;
            match kind {
                TokenKind::Api if !strings.is_empty() => {
                    return Err(Error::format(lineno, "api row after string rows"))
                }
                TokenKind::Api => api.push((token, score)),
                TokenKind::String => strings.push((token, score)),
            }
        }
        Vocabulary::new(api, strings, k_api, k_str)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Vocabulary::parse(&text)
    }
}

fn index_of(tokens: &[String], kind: TokenKind) -> Result<HashMap<String, usize>> {
    let mut index = HashMap::with_capacity(tokens.len());
    for (i, t) in tokens.iter().enumerate() {
        if normalize_token(t, kind).as_deref() != Some(t.as_str()) {
            return Err(Error::InvalidConfig(format!(
                "{kind} token `{t}` is not in normalized form"
            )));
        }
        if index.insert(t.clone(), i).is_some() {
            return Err(Error::InvalidConfig(format!(
                "duplicate {kind} token `{t}`"
            )));
        }
    }
    Ok(index)
}

pub(crate) fn parse_params(rest: &str, line: usize) -> Result<BTreeMap<String, String>> {
    rest.split_whitespace()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Error::format(line, format!("expected key=value, got `{kv}`")))
        })
        .collect()
}

pub(crate) fn param_usize(
    params: &BTreeMap<String, String>,
    key: &str,
    line: usize,
) -> Result<usize> {
    params
        .get(key)
        .ok_or_else(|| Error::format(line, format!("missing `{key}`")))?
        .parse()
        .map_err(|_| Error::format(line, format!("`{key}` is not an integer")))
}

/// Escapes backslash, tab, newline and carriage return so tokens fit in one
/// tab-separated field.
pub(crate) fn escape_field(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

pub(crate) fn unescape_field(s: &str) -> Result<String, String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            other => return Err(format!("bad escape `\\{}`", other.unwrap_or(' '))),
        }
    }
    Ok(out)
}

/// Normalized tokens of a graph node, by kind.
pub(crate) fn node_tokens<'a>(
    raw: &'a [String],
    kind: TokenKind,
) -> impl Iterator<Item = String> + 'a {
    raw.iter().filter_map(move |t| normalize_token(t, kind))
}

fn collect_stats(corpus: &Corpus, kind: TokenKind) -> HashMap<String, TokenStats> {
    let mut stats: HashMap<String, TokenStats> = HashMap::new();
    for g in &corpus.records {
        let mut present = HashSet::new();
        for node in &g.nodes {
            let raw = match kind {
                TokenKind::Api => &node.apis,
                TokenKind::String => &node.strings,
            };
            for t in node_tokens(raw, kind) {
                stats.entry(t.clone()).or_default().occurrences += 1;
                present.insert(t);
            }
        }
        for t in present {
            let s = stats.get_mut(&t).expect("inserted above");
            match g.label {
                Some(Label::Malware) => s.malware_graphs += 1,
                Some(Label::Benign) => s.benign_graphs += 1,
                None => {}
            }
        }
    }
    stats
}

fn select(
    stats: HashMap<String, TokenStats>,
    k: usize,
    prefilter: usize,
    scorer: &dyn TokenScorer,
    n_malware: u64,
    n_benign: u64,
) -> Vec<(String, f64)> {
    let mut candidates: Vec<(String, TokenStats)> = stats.into_iter().collect();
    candidates.sort_by(|a, b| b.1.occurrences.cmp(&a.1.occurrences).then(a.0.cmp(&b.0)));
    candidates.truncate(prefilter);

    let mut scored: Vec<(String, f64, u64)> = candidates
        .into_iter()
        .map(|(t, s)| {
            let score = scorer.score(&s, n_malware, n_benign);
            (t, score, s.occurrences)
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(b.2.cmp(&a.2)).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    scored.into_iter().map(|(t, s, _)| (t, s)).collect()
}

/// Selects the top `k_api` API tokens and top `k_str` string tokens by
/// chi-squared association between per-graph presence and label.
pub fn build_vocabulary(
    corpus: &Corpus,
    k_api: usize,
    k_str: usize,
    config: &SelectionConfig,
) -> Result<Vocabulary> {
    build_vocabulary_with(corpus, k_api, k_str, config, &ChiSquared)
}

pub fn build_vocabulary_with(
    corpus: &Corpus,
    k_api: usize,
    k_str: usize,
    config: &SelectionConfig,
    scorer: &dyn TokenScorer,
) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::InvalidCorpus("empty corpus".into()));
    }
    if k_api == 0 || k_str == 0 {
        return Err(Error::InvalidConfig("k_api and k_str must be >= 1".into()));
    }
    corpus.require_labeled()?;
    let n_malware = corpus.count_label(Label::Malware) as u64;
    let n_benign = corpus.count_label(Label::Benign) as u64;
    if n_malware == 0 || n_benign == 0 {
        return Err(Error::InvalidCorpus(
            "vocabulary selection needs both malware and benign graphs".into(),
        ));
    }

    let api = select(
        collect_stats(corpus, TokenKind::Api),
        k_api,
        config.prefilter,
        scorer,
        n_malware,
        n_benign,
    );
    let strings = select(
        collect_stats(corpus, TokenKind::String),
        k_str,
        config.prefilter,
        scorer,
        n_malware,
        n_benign,
    );
    Vocabulary::new(api, strings, k_api, k_str)
}

/// Sparse non-negative count matrix: one row per node, each row a list of
/// `(feature index, count)` sorted by index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureMatrix {
    pub d: usize,
    pub node_order: Vec<String>,
    rows: Vec<Vec<(usize, u32)>>,
}

impl FeatureMatrix {
    pub fn zeros(node_order: Vec<String>, d: usize) -> Self {
        let rows = vec![Vec::new(); node_order.len()];
        FeatureMatrix {
            d,
            node_order,
            rows,
        }
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[(usize, u32)] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> u32 {
        match self.rows[i].binary_search_by_key(&j, |&(c, _)| c) {
            Ok(p) => self.rows[i][p].1,
            Err(_) => 0,
        }
    }

    /// Adds `count` to entry `(i, j)`.
    pub fn add(&mut self, i: usize, j: usize, count: u32) {
        assert!(j < self.d, "feature index {j} out of range {}", self.d);
        if count == 0 {
            return;
        }
        let row = &mut self.rows[i];
        match row.binary_search_by_key(&j, |&(c, _)| c) {
            Ok(p) => row[p].1 += count,
            Err(p) => row.insert(p, (j, count)),
        }
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n(), self.d));
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, c) in row {
                out[[i, j]] = c as f64;
            }
        }
        out
    }
}

/// Bag-of-words embedding: row `i` counts vocabulary tokens of `g.nodes[i]`.
pub fn embed_graph(g: &Fcg, v: &Vocabulary) -> FeatureMatrix {
    let mut x = FeatureMatrix::zeros(g.nodes.iter().map(|n| n.id.clone()).collect(), v.dim());
    for (i, node) in g.nodes.iter().enumerate() {
        for (raw, kind) in [
            (&node.apis, TokenKind::Api),
            (&node.strings, TokenKind::String),
        ] {
            for t in node_tokens(raw, kind) {
                if let Some(j) = v.index(kind, &t) {
                    x.add(i, j, 1);
                }
            }
        }
    }
    x
}
