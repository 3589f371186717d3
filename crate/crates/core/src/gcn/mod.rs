//! Two-layer GCN with graph readout and a feed-forward classifier head,
//! trained from scratch with optional non-negativity constraints that make
//! the score monotone non-decreasing in the node features.

mod adjacency;
mod forward;
mod model;
mod train;

pub use adjacency::NormalizedAdjacency;
pub use forward::{
    batch_pass, loss_and_gradients, sigmoid, ForwardCache, NodeFeatures, Sample, LOSS_EPS,
};
pub use model::{Dims, Gradients, ModelParams, Readout, PARAM_NAMES};
pub use train::{
    evaluate, train, Adam, AdversarialTraining, EarlyStopping, EpochStats, NonnegAudit,
    ProjectionCadence, StopReason, TrainConfig, TrainReport,
};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fcg::{normalize_fcg, Corpus, Fcg, Label};
use crate::featurize::{embed_graph, FeatureMatrix, Vocabulary};

/// A graph ready for the network: normalized adjacency and features, rows
/// in the graph's node order.
#[derive(Debug, Clone)]
pub struct EmbeddedGraph {
    pub graph_id: String,
    pub label: Option<Label>,
    pub adj: NormalizedAdjacency,
    pub x: FeatureMatrix,
}

impl EmbeddedGraph {
    /// Normalizes `g` first; fails if it does not validate.
    pub fn new(g: &Fcg, vocab: &Vocabulary) -> Result<Self> {
        let g = normalize_fcg(g)?;
        Ok(Self::from_normalized(&g, vocab))
    }

    pub fn from_normalized(g: &Fcg, vocab: &Vocabulary) -> Self {
        EmbeddedGraph {
            graph_id: g.graph_id.clone(),
            label: g.label,
            adj: NormalizedAdjacency::from_fcg(g),
            x: embed_graph(g, vocab),
        }
    }

    pub fn embed_corpus(corpus: &Corpus, vocab: &Vocabulary) -> Result<Vec<Self>> {
        corpus
            .records
            .par_iter()
            .map(|g| Self::new(g, vocab))
            .collect()
    }

    pub fn target(&self) -> Result<f64> {
        self.label
            .map(Label::target)
            .ok_or_else(|| Error::InvalidCorpus(format!("graph {} has no label", self.graph_id)))
    }
}

impl ModelParams {
    pub fn score_graph(&self, g: &Fcg, vocab: &Vocabulary) -> Result<f64> {
        let e = EmbeddedGraph::new(g, vocab)?;
        self.score(&e.adj, &e.x)
    }
}
