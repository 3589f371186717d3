//! Function-call-graph data model, structural validation, normalization and
//! the newline-delimited interchange format.
//!
//! One graph per line, each a JSON object with exactly the fields
//! `graph_id`, `label`, `main`, `nodes` and `edges`:
//!
//! ```text
//! {"graph_id":"g1","label":"malware","main":"main","nodes":[{"id":"main","apis":["CreateFileW"],"strings":["hello world"]}],"edges":[]}
//! ```

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Malware,
    Benign,
}

impl Label {
    /// Training target: malware is the positive class.
    pub fn target(self) -> f64 {
        match self {
            Label::Malware => 1.0,
            Label::Benign => 0.0,
        }
    }

    pub fn from_target(y: u8) -> Self {
        if y == 1 {
            Label::Malware
        } else {
            Label::Benign
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Malware => f.write_str("malware"),
            Label::Benign => f.write_str("benign"),
        }
    }
}

/// One function of the program: its API calls and referenced strings, in the
/// order they were read. Duplicates are meaningful (they are counted).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionNode {
    pub id: String,
    pub apis: Vec<String>,
    pub strings: Vec<String>,
}

impl FunctionNode {
    pub fn new(id: impl Into<String>) -> Self {
        FunctionNode {
            id: id.into(),
            apis: Vec::new(),
            strings: Vec::new(),
        }
    }

    pub fn token_count(&self) -> usize {
        self.apis.len() + self.strings.len()
    }
}

/// A labeled, directed function-call graph. Edges are `(caller, callee)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fcg {
    pub graph_id: String,
    pub label: Option<Label>,
    #[serde(rename = "main")]
    pub main_id: String,
    pub nodes: Vec<FunctionNode>,
    pub edges: Vec<(String, String)>,
}

impl Fcg {
    pub fn node_index(&self) -> HashMap<&str, usize> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id.as_str(), i))
            .collect()
    }

    pub fn token_count(&self) -> usize {
        self.nodes.iter().map(FunctionNode::token_count).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyId { position: usize },
    DuplicateId(String),
    UnknownMain(String),
    UnknownEdgeEndpoint(String),
    EmptyGraph,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyId { position } => write!(f, "empty id at node position {position}"),
            Violation::DuplicateId(id) => write!(f, "duplicate id {id}"),
            Violation::UnknownMain(id) => write!(f, "unknown main id {id}"),
            Violation::UnknownEdgeEndpoint(id) => write!(f, "unknown edge endpoint {id}"),
            Violation::EmptyGraph => f.write_str("graph has no nodes"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Warning {
    IsolatedNode(String),
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warning::IsolatedNode(id) => write!(f, "isolated node {id}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub errors: Vec<Violation>,
    pub warnings: Vec<Warning>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }

    fn describe_errors(&self) -> String {
        self.errors
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join("; ")
    }
}

/// Checks referential integrity and id uniqueness. Isolated nodes are only
/// warnings since [`normalize_fcg`] repairs them.
pub fn validate_fcg(g: &Fcg) -> ValidationReport {
    let mut report = ValidationReport::default();
    if g.nodes.is_empty() {
        report.errors.push(Violation::EmptyGraph);
    }

    let mut seen = HashSet::new();
    for (position, node) in g.nodes.iter().enumerate() {
        if node.id.is_empty() {
            report.errors.push(Violation::EmptyId { position });
        } else if !seen.insert(node.id.as_str()) {
            report.errors.push(Violation::DuplicateId(node.id.clone()));
        }
    }

    if !g.nodes.is_empty() && !seen.contains(g.main_id.as_str()) {
        report
            .errors
            .push(Violation::UnknownMain(g.main_id.clone()));
    }

    let mut reported = HashSet::new();
    let mut touched = HashSet::new();
    for (caller, callee) in &g.edges {
        for end in [caller, callee] {
            if !seen.contains(end.as_str()) && reported.insert(end.as_str()) {
                report
                    .errors
                    .push(Violation::UnknownEdgeEndpoint(end.clone()));
            }
        }
        if caller != callee {
            touched.insert(caller.as_str());
            touched.insert(callee.as_str());
        }
    }

    for node in &g.nodes {
        if node.id != g.main_id && !touched.contains(node.id.as_str()) {
            report.warnings.push(Warning::IsolatedNode(node.id.clone()));
        }
    }
    report
}

/// Returns a copy with duplicate and self edges removed and every isolated
/// non-main node attached by an edge `main -> node`. Edge order is first
/// occurrence, followed by the attachments in node order.
pub fn normalize_fcg(g: &Fcg) -> Result<Fcg> {
    let report = validate_fcg(g);
    if !report.is_ok() {
        return Err(Error::InvalidGraph {
            graph_id: g.graph_id.clone(),
            violations: report.describe_errors(),
        });
    }

    let mut seen = HashSet::new();
    let mut edges = Vec::with_capacity(g.edges.len());
    for (caller, callee) in &g.edges {
        if caller != callee && seen.insert((caller.as_str(), callee.as_str())) {
            edges.push((caller.clone(), callee.clone()));
        }
    }

    let connected: HashSet<&str> = edges
        .iter()
        .flat_map(|(a, b)| [a.as_str(), b.as_str()])
        .collect();
    let attach: Vec<(String, String)> = g
        .nodes
        .iter()
        .filter(|n| n.id != g.main_id && !connected.contains(n.id.as_str()))
        .map(|n| (g.main_id.clone(), n.id.clone()))
        .collect();
    edges.extend(attach);

    Ok(Fcg { edges, ..g.clone() })
}

/// An ordered collection of graphs plus free-form provenance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub records: Vec<Fcg>,
    pub provenance: BTreeMap<String, String>,
}

impl Corpus {
    pub fn new(records: Vec<Fcg>) -> Self {
        Corpus {
            records,
            provenance: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn count_label(&self, label: Label) -> usize {
        self.records
            .iter()
            .filter(|g| g.label == Some(label))
            .count()
    }

    /// Fails on the first record without a label, naming it.
    pub fn require_labeled(&self) -> Result<()> {
        match self.records.iter().position(|g| g.label.is_none()) {
            Some(i) => Err(Error::InvalidCorpus(format!(
                "record {} (graph_id {}) has no label",
                i + 1,
                self.records[i].graph_id
            ))),
            None => Ok(()),
        }
    }

    /// Validates then normalizes every record.
    pub fn normalized(&self) -> Result<Corpus> {
        let records = self
            .records
            .iter()
            .map(normalize_fcg)
            .collect::<Result<Vec<_>>>()?;
        Ok(Corpus {
            records,
            provenance: self.provenance.clone(),
        })
    }

    pub fn with_label(&self, label: Label) -> Corpus {
        Corpus {
            records: self
                .records
                .iter()
                .filter(|g| g.label == Some(label))
                .cloned()
                .collect(),
            provenance: self.provenance.clone(),
        }
    }

    /// Shuffles record order with `seed` and cuts consecutive chunks of the
    /// requested sizes.
    pub fn split(&self, sizes: &[usize], seed: u64) -> Result<Vec<Corpus>> {
        let total: usize = sizes.iter().sum();
        if total > self.records.len() {
            return Err(Error::InvalidConfig(format!(
                "split sizes sum to {total} but corpus has {} records",
                self.records.len()
            )));
        }
        let mut order: Vec<usize> = (0..self.records.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut start = 0;
        Ok(sizes
            .iter()
            .map(|&size| {
                let records = order[start..start + size]
                    .iter()
                    .map(|&i| self.records[i].clone())
                    .collect();
                start += size;
                let mut provenance = self.provenance.clone();
                provenance.insert("split_seed".into(), seed.to_string());
                Corpus {
                    records,
                    provenance,
                }
            })
            .collect())
    }
}

/// How unknown fields in the interchange format are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strictness {
    #[default]
    Strict,
    Lenient,
}

const GRAPH_FIELDS: [&str; 5] = ["graph_id", "label", "main", "nodes", "edges"];
const NODE_FIELDS: [&str; 3] = ["id", "apis", "strings"];

fn check_fields(
    obj: &serde_json::Map<String, serde_json::Value>,
    expected: &[&str],
    what: &str,
    line: usize,
    strictness: Strictness,
    warnings: &mut Vec<String>,
) -> Result<()> {
    for field in expected {
        if !obj.contains_key(*field) {
            return Err(Error::format(
                line,
                format!("{what} missing field `{field}`"),
            ));
        }
    }
    for key in obj.keys() {
        if !expected.contains(&key.as_str()) {
            match strictness {
                Strictness::Strict => {
                    return Err(Error::format(
                        line,
                        format!("{what} has unknown field `{key}`"),
                    ))
                }
                Strictness::Lenient => warnings.push(format!(
                    "line {line}: ignoring unknown {what} field `{key}`"
                )),
            }
        }
    }
    Ok(())
}

/// Parses one interchange record. `line` is only used for diagnostics.
pub fn parse_record(
    text: &str,
    line: usize,
    strictness: Strictness,
    warnings: &mut Vec<String>,
) -> Result<Fcg> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::format(line, e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::format(line, "record is not an object"))?;
    check_fields(obj, &GRAPH_FIELDS, "graph", line, strictness, warnings)?;
    let nodes = obj["nodes"]
        .as_array()
        .ok_or_else(|| Error::format(line, "`nodes` is not an array"))?;
    for node in nodes {
        let node = node
            .as_object()
            .ok_or_else(|| Error::format(line, "node is not an object"))?;
        check_fields(node, &NODE_FIELDS, "node", line, strictness, warnings)?;
    }
    serde_json::from_value(value).map_err(|e| Error::format(line, e.to_string()))
}

pub fn read_corpus_from<R: BufRead>(
    reader: R,
    strictness: Strictness,
) -> Result<(Corpus, Vec<String>)> {
    let mut warnings = Vec::new();
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::format(i + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(parse_record(&line, i + 1, strictness, &mut warnings)?);
    }
    Ok((Corpus::new(records), warnings))
}

pub fn read_corpus(path: &Path, strictness: Strictness) -> Result<(Corpus, Vec<String>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let (mut corpus, warnings) = read_corpus_from(std::io::BufReader::new(file), strictness)?;
    corpus
        .provenance
        .insert("source".into(), path.display().to_string());
    Ok((corpus, warnings))
}

pub fn write_corpus_to<W: Write>(corpus: &Corpus, mut out: W) -> std::io::Result<()> {
    for g in &corpus.records {
        serde_json::to_writer(&mut out, g)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn corpus_to_string(corpus: &Corpus) -> String {
    let mut buf = Vec::new();
    write_corpus_to(corpus, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

pub fn write_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_corpus_to(corpus, std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(id: &str) -> FunctionNode {
        FunctionNode::new(id)
    }

    fn graph(nodes: &[&str], edges: &[(&str, &str)]) -> Fcg {
        Fcg {
            graph_id: "g".into(),
            label: Some(Label::Malware),
            main_id: nodes.first().copied().unwrap_or("main").into(),
            nodes: nodes.iter().map(|n| node(n)).collect(),
            edges: edges
                .iter()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect(),
        }
    }

    #[test]
    fn unknown_endpoint_is_reported() {
        let g = graph(&["main", "f1"], &[("main", "f9")]);
        let report = validate_fcg(&g);
        assert!(!report.is_ok());
        assert_eq!(report.errors[0].to_string(), "unknown edge endpoint f9");
    }

    #[test]
    fn single_node_graph_is_valid() {
        let report = validate_fcg(&graph(&["main"], &[]));
        assert!(report.is_ok());
        assert!(report.warnings.is_empty());
    }

    #[test]
    fn duplicate_id_is_reported() {
        let report = validate_fcg(&graph(&["main", "f1", "f1"], &[("main", "f1")]));
        assert_eq!(report.errors, vec![Violation::DuplicateId("f1".into())]);
        assert!(report.errors[0].to_string().contains("duplicate id"));
    }

    #[test]
    fn missing_main_and_empty_ids() {
        let mut g = graph(&["main", ""], &[]);
        g.main_id = "WinMain".into();
        let report = validate_fcg(&g);
        assert!(report.errors.contains(&Violation::EmptyId { position: 1 }));
        assert!(report
            .errors
            .contains(&Violation::UnknownMain("WinMain".into())));
        assert!(validate_fcg(&graph(&[], &[]))
            .errors
            .contains(&Violation::EmptyGraph));
    }

    #[test]
    fn isolation_is_only_a_warning() {
        let report = validate_fcg(&graph(&["main", "f1"], &[]));
        assert!(report.is_ok());
        assert_eq!(report.warnings, vec![Warning::IsolatedNode("f1".into())]);
    }

    #[test]
    fn isolated_node_is_attached_to_main() {
        let g = normalize_fcg(&graph(&["main", "f1"], &[])).unwrap();
        assert_eq!(g.edges, vec![("main".to_string(), "f1".to_string())]);
    }

    #[test]
    fn lone_main_is_unchanged() {
        let g = graph(&["main"], &[]);
        assert_eq!(normalize_fcg(&g).unwrap(), g);
    }

    #[test]
    fn duplicate_and_self_edges_are_dropped() {
        let g = graph(
            &["main", "f1"],
            &[("main", "f1"), ("main", "f1"), ("f1", "f1")],
        );
        let n = normalize_fcg(&g).unwrap();
        assert_eq!(n.edges, vec![("main".to_string(), "f1".to_string())]);
    }

    #[test]
    fn node_with_only_self_edge_gets_attached() {
        let g = graph(&["main", "f1", "f2"], &[("main", "f1"), ("f2", "f2")]);
        let n = normalize_fcg(&g).unwrap();
        assert_eq!(
            n.edges,
            vec![
                ("main".to_string(), "f1".to_string()),
                ("main".to_string(), "f2".to_string())
            ]
        );
    }

    #[test]
    fn normalize_rejects_invalid() {
        let g = graph(&["main"], &[("main", "f9")]);
        assert!(matches!(normalize_fcg(&g), Err(Error::InvalidGraph { .. })));
    }

    #[test]
    fn strict_rejects_unknown_fields_lenient_warns() {
        let line = r#"{"graph_id":"g","label":null,"main":"m","nodes":[{"id":"m","apis":[],"strings":[],"extra":1}],"edges":[],"note":"x"}"#;
        let mut warnings = Vec::new();
        assert!(parse_record(line, 1, Strictness::Strict, &mut warnings).is_err());
        let g = parse_record(line, 1, Strictness::Lenient, &mut warnings).unwrap();
        assert_eq!(g.label, None);
        assert_eq!(warnings.len(), 2);
    }

    #[test]
    fn missing_field_is_an_error() {
        let line = r#"{"graph_id":"g","main":"m","nodes":[],"edges":[]}"#;
        let err = parse_record(line, 7, Strictness::Lenient, &mut Vec::new()).unwrap_err();
        assert!(err.to_string().contains("line 7"));
        assert!(err.to_string().contains("label"));
    }

    #[test]
    fn wire_format_field_names() {
        let mut g = graph(&["main", "f1"], &[("main", "f1")]);
        g.nodes[0].apis.push("CreateFileW".into());
        let text = corpus_to_string(&Corpus::new(vec![g.clone()]));
        assert_eq!(
            text,
            "{\"graph_id\":\"g\",\"label\":\"malware\",\"main\":\"main\",\"nodes\":[{\"id\":\"main\",\"apis\":[\"CreateFileW\"],\"strings\":[]},{\"id\":\"f1\",\"apis\":[],\"strings\":[]}],\"edges\":[[\"main\",\"f1\"]]}\n"
        );
        let (back, warnings) = read_corpus_from(text.as_bytes(), Strictness::Strict).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(back.records, vec![g]);
    }

    #[test]
    fn require_labeled_names_first_offender() {
        let mut a = graph(&["main"], &[]);
        let mut b = a.clone();
        b.graph_id = "second".into();
        b.label = None;
        a.graph_id = "first".into();
        let err = Corpus::new(vec![a, b]).require_labeled().unwrap_err();
        assert!(err.to_string().contains("record 2 (graph_id second)"));
    }

    #[test]
    fn split_partitions_records() {
        let records: Vec<Fcg> = (0..10)
            .map(|i| {
                let mut g = graph(&["main"], &[]);
                g.graph_id = format!("g{i}");
                g
            })
            .collect();
        let parts = Corpus::new(records).split(&[6, 3], 1).unwrap();
        assert_eq!(parts[0].len(), 6);
        assert_eq!(parts[1].len(), 3);
        let ids: HashSet<_> = parts
            .iter()
            .flat_map(|c| c.records.iter().map(|g| g.graph_id.clone()))
            .collect();
        assert_eq!(ids.len(), 9);
    }
}
