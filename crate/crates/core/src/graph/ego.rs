use std::collections::HashSet;

use rayon::prelude::*;

use crate::Result;

use super::{CitationCorpus, NodeId};

/// A paper together with its direct references.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EgoNetwork {
    pub center: NodeId,
    /// Sequence order fed to the model; the center is last.
    pub ordered_nodes: Vec<NodeId>,
    /// Corpus edges with both endpoints in the ego network, sorted.
    pub edges: Vec<(NodeId, NodeId)>,
    pub central_index: usize,
}

impl EgoNetwork {
    pub fn len(&self) -> usize {
        self.ordered_nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ordered_nodes.is_empty()
    }
}

/// `{center} ∪ references(center)` with every corpus edge among them,
/// ordered by [`order_nodes`].
pub fn build_ego_network(corpus: &CitationCorpus, center: NodeId) -> Result<EgoNetwork> {
    let center_node = corpus.node(center)?;
    let refs = corpus.references(center_node.id);
    let members: HashSet<NodeId> = refs.iter().copied().chain([center]).collect();
    let mut edges = Vec::new();
    for &u in refs.iter().chain([center].iter()) {
        for &v in corpus.references(u) {
            if members.contains(&v) {
                edges.push((u, v));
            }
        }
    }
    edges.sort_unstable();
    let mut ordered_nodes = refs.to_vec();
    ordered_nodes.push(center);
    let ego = EgoNetwork {
        center,
        central_index: ordered_nodes.len() - 1,
        ordered_nodes,
        edges,
    };
    Ok(order_nodes(corpus, ego))
}

/// Builds ego networks for many centers in parallel, preserving order.
pub fn build_ego_networks(corpus: &CitationCorpus, centers: &[NodeId]) -> Result<Vec<EgoNetwork>> {
    centers
        .par_iter()
        .map(|&c| build_ego_network(corpus, c))
        .collect()
}

/// References ascending by `(year, id)` with missing years first, center last.
pub fn order_nodes(corpus: &CitationCorpus, mut ego: EgoNetwork) -> EgoNetwork {
    let center = ego.center;
    let mut refs: Vec<NodeId> = ego
        .ordered_nodes
        .iter()
        .copied()
        .filter(|&n| n != center)
        .collect();
    // `None < Some(_)`, so missing years sort first.
    refs.sort_by_key(|&n| (corpus.nodes()[n.0].year, n));
    refs.push(center);
    ego.central_index = refs.len() - 1;
    ego.ordered_nodes = refs;
    ego
}
