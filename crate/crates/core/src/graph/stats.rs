use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{CitationCorpus, EgoNetwork, NodeId};

/// Statistics of the undirected simple view of a graph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub node_count: usize,
    /// Undirected edges; reciprocal citations count once.
    pub edge_count: usize,
    pub avg_degree: f64,
    pub density: f64,
    /// Mean local clustering coefficient over all nodes.
    pub clustering_coefficient: f64,
}

/// Per-dataset averages of [`GraphStats`] plus the same statistics on the
/// whole corpus graph (`merged_*`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    pub graphs: usize,
    pub node_count_mean: f64,
    pub edge_count_mean: f64,
    pub avg_degree_mean: f64,
    pub density_mean: f64,
    pub clustering_coefficient_mean: f64,
    pub merged_node_count: usize,
    pub merged_edge_count: usize,
    pub merged_avg_degree: f64,
    pub merged_density: f64,
    pub merged_clustering_coefficient: f64,
}

pub fn compute_stats(ego: &EgoNetwork) -> GraphStats {
    let local: HashMap<NodeId, usize> = ego
        .ordered_nodes
        .iter()
        .enumerate()
        .map(|(i, &n)| (n, i))
        .collect();
    undirected_stats(
        ego.len(),
        ego.edges.iter().map(|&(a, b)| (local[&a], local[&b])),
    )
}

pub fn summarize_stats(corpus: &CitationCorpus, egos: &[EgoNetwork]) -> StatsSummary {
    let per: Vec<GraphStats> = egos.iter().map(compute_stats).collect();
    let mean = |f: &dyn Fn(&GraphStats) -> f64| {
        if per.is_empty() {
            0.0
        } else {
            per.iter().map(f).sum::<f64>() / per.len() as f64
        }
    };
    let merged = undirected_stats(
        corpus.node_count(),
        corpus.edges().iter().map(|&(a, b)| (a.0, b.0)),
    );
    StatsSummary {
        graphs: per.len(),
        node_count_mean: mean(&|s| s.node_count as f64),
        edge_count_mean: mean(&|s| s.edge_count as f64),
        avg_degree_mean: mean(&|s| s.avg_degree),
        density_mean: mean(&|s| s.density),
        clustering_coefficient_mean: mean(&|s| s.clustering_coefficient),
        merged_node_count: merged.node_count,
        merged_edge_count: merged.edge_count,
        merged_avg_degree: merged.avg_degree,
        merged_density: merged.density,
        merged_clustering_coefficient: merged.clustering_coefficient,
    }
}

fn undirected_stats(n: usize, edges: impl Iterator<Item = (usize, usize)>) -> GraphStats {
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for (a, b) in edges {
        if a != b {
            adj[a].insert(b);
            adj[b].insert(a);
        }
    }
    let e: usize = adj.iter().map(|s| s.len()).sum::<usize>() / 2;
    if n <= 1 {
        return GraphStats {
            node_count: n,
            edge_count: e,
            avg_degree: 0.0,
            density: 0.0,
            clustering_coefficient: 0.0,
        };
    }
    let mut cc_total = 0.0;
    for nbrs in &adj {
        let k = nbrs.len();
        if k < 2 {
            continue;
        }
        let list: Vec<usize> = nbrs.iter().copied().collect();
        let mut links = 0usize;
        for (i, &u) in list.iter().enumerate() {
            links += list[i + 1..].iter().filter(|v| adj[u].contains(v)).count();
        }
        cc_total += 2.0 * links as f64 / (k * (k - 1)) as f64;
    }
    GraphStats {
        node_count: n,
        edge_count: e,
        avg_degree: 2.0 * e as f64 / n as f64,
        density: 2.0 * e as f64 / (n * (n - 1)) as f64,
        clustering_coefficient: cc_total / n as f64,
    }
}
