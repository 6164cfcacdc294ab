//! Citation corpus, ego networks, graph statistics, labels and splits.

mod archive;
mod ego;
mod ingest;
mod label;
mod split;
mod stats;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use archive::{decode_corpus, encode_corpus, read_corpus, write_corpus};
pub use ego::{build_ego_network, build_ego_networks, order_nodes, EgoNetwork};
pub use ingest::{ingest_corpus, read_provided_labels, IngestPaths, IngestReport};
pub use label::{label_by_complexity, ComplexityFeatures, ComplexityLabeler, LabelCriterion};
pub use split::{split_dataset, split_unstratified, DatasetSplit, SplitRatios};
pub use stats::{compute_stats, summarize_stats, GraphStats, StatsSummary};

/// Dense node index, `0..node_count` after ingestion.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub struct NodeId(pub usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PaperNode {
    pub id: NodeId,
    /// Identifier used in the input files.
    pub original_id: u64,
    pub year: Option<i32>,
    pub meta: Vec<f64>,
    pub embedding: Vec<f64>,
}

/// Immutable directed citation graph; an edge `(citing, cited)` records a
/// reference.
#[derive(Debug, Clone, PartialEq)]
pub struct CitationCorpus {
    nodes: Vec<PaperNode>,
    edges: Vec<(NodeId, NodeId)>,
    f_meta: usize,
    f_embed: usize,
    references: Vec<Vec<NodeId>>,
    cited_by: Vec<Vec<NodeId>>,
}

/// How many raw edges were discarded while building a corpus.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeCleanup {
    pub self_loops: usize,
    pub duplicates: usize,
}

impl CitationCorpus {
    /// Builds a corpus, dropping self-loops and duplicate edges.
    ///
    /// Node `i` of `nodes` must carry `NodeId(i)`.
    pub fn new(
        nodes: Vec<PaperNode>,
        raw_edges: impl IntoIterator<Item = (NodeId, NodeId)>,
        f_meta: usize,
        f_embed: usize,
    ) -> Result<(Self, EdgeCleanup)> {
        if f_meta == 0 || f_embed == 0 {
            return Err(Error::Schema("feature widths must be positive".into()));
        }
        for (i, n) in nodes.iter().enumerate() {
            if n.id.0 != i {
                return Err(Error::Schema(format!("node {i} carries id {}", n.id.0)));
            }
            if n.meta.len() != f_meta {
                return Err(Error::Schema(format!(
                    "node {} has meta length {}, expected {f_meta}",
                    n.original_id,
                    n.meta.len()
                )));
            }
            if n.embedding.len() != f_embed {
                return Err(Error::Schema(format!(
                    "node {} has embedding length {}, expected {f_embed}",
                    n.original_id,
                    n.embedding.len()
                )));
            }
            if !n.meta.iter().chain(&n.embedding).all(|v| v.is_finite()) {
                return Err(Error::Schema(format!(
                    "node {} has non-finite features",
                    n.original_id
                )));
            }
        }
        let n = nodes.len();
        let mut cleanup = EdgeCleanup::default();
        let mut edges = Vec::new();
        for (a, b) in raw_edges {
            if a.0 >= n || b.0 >= n {
                return Err(Error::Lookup(format!(
                    "edge ({}, {}) references a missing node",
                    a.0, b.0
                )));
            }
            if a == b {
                cleanup.self_loops += 1;
            } else {
                edges.push((a, b));
            }
        }
        let before = edges.len();
        edges.sort_unstable();
        edges.dedup();
        cleanup.duplicates = before - edges.len();

        let mut references = vec![Vec::new(); n];
        let mut cited_by = vec![Vec::new(); n];
        for &(a, b) in &edges {
            references[a.0].push(b);
            cited_by[b.0].push(a);
        }
        for list in cited_by.iter_mut() {
            list.sort_unstable();
        }
        Ok((
            CitationCorpus {
                nodes,
                edges,
                f_meta,
                f_embed,
                references,
                cited_by,
            },
            cleanup,
        ))
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn f_meta(&self) -> usize {
        self.f_meta
    }

    pub fn f_embed(&self) -> usize {
        self.f_embed
    }

    pub fn nodes(&self) -> &[PaperNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Result<&PaperNode> {
        self.nodes
            .get(id.0)
            .ok_or_else(|| Error::Lookup(format!("node {} not in corpus", id.0)))
    }

    /// Edges sorted by `(citing, cited)`.
    pub fn edges(&self) -> &[(NodeId, NodeId)] {
        &self.edges
    }

    /// Papers cited by `id`, ascending.
    pub fn references(&self, id: NodeId) -> &[NodeId] {
        &self.references[id.0]
    }

    /// Papers citing `id`, ascending.
    pub fn cited_by(&self, id: NodeId) -> &[NodeId] {
        &self.cited_by[id.0]
    }

    pub fn in_degree(&self, id: NodeId) -> usize {
        self.cited_by[id.0].len()
    }

    pub fn original_id(&self, id: NodeId) -> u64 {
        self.nodes[id.0].original_id
    }

    /// Dense id of an input-file identifier. Nodes are stored in ascending
    /// original-id order.
    pub fn lookup(&self, original: u64) -> Option<NodeId> {
        self.nodes
            .binary_search_by_key(&original, |n| n.original_id)
            .ok()
            .map(NodeId)
    }
}
