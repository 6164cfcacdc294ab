//! Knowledge Quantification Index over the citation DAG.
//!
//! Knowledge flows from a cited paper to the papers citing it: the parents
//! of α are the papers α cites, its children are the papers citing α.
//! Volumes follow
//!
//! ```text
//! V(α) = d_out(α) + Σ_{c ∈ children(α)} V(c) / d_in(c)
//! ```
//!
//! and the index is
//!
//! ```text
//! κ(α) = −Σ_{p ∈ parents(α)} V(α) / (d_in(α)·W) · log2(V(α) / (d_in(α)·V(p)))
//! ```
//!
//! with `W = Σ V` over the whole tree and `0·log 0 = 0`.

use rayon::prelude::*;
use serde::Serialize;

use crate::graph::{CitationCorpus, NodeId};
use crate::quantile::{bin, quantile_thresholds};
use crate::{Error, Result};

/// Acyclic parent/child adjacency.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeTree {
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
    removed_edges: usize,
}

impl KnowledgeTree {
    /// Builds from `(citing, cited)` pairs on nodes `0..n`, dropping DFS back
    /// edges so the result is acyclic. Duplicate pairs and self-loops are
    /// ignored.
    pub fn from_citations(n: usize, citations: &[(usize, usize)]) -> Self {
        let mut refs: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(a, b) in citations {
            if a != b {
                refs[a].push(b);
            }
        }
        for r in refs.iter_mut() {
            r.sort_unstable();
            r.dedup();
        }

        // Iterative DFS along citing -> cited; an edge into a node still on
        // the stack closes a cycle and is dropped.
        #[derive(Clone, Copy, PartialEq)]
        enum Color {
            White,
            Gray,
            Black,
        }
        let mut color = vec![Color::White; n];
        let mut keep: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut removed = 0;
        for root in 0..n {
            if color[root] != Color::White {
                continue;
            }
            let mut stack: Vec<(usize, usize)> = vec![(root, 0)];
            color[root] = Color::Gray;
            while let Some(&mut (u, ref mut next)) = stack.last_mut() {
                if *next < refs[u].len() {
                    let v = refs[u][*next];
                    *next += 1;
                    match color[v] {
                        Color::Gray => removed += 1,
                        Color::White => {
                            keep[u].push(v);
                            color[v] = Color::Gray;
                            stack.push((v, 0));
                        }
                        Color::Black => keep[u].push(v),
                    }
                } else {
                    color[u] = Color::Black;
                    stack.pop();
                }
            }
        }

        let mut children = vec![Vec::new(); n];
        for (u, ps) in keep.iter().enumerate() {
            for &p in ps {
                children[p].push(u);
            }
        }
        KnowledgeTree {
            parents: keep,
            children,
            removed_edges: removed,
        }
    }

    pub fn node_count(&self) -> usize {
        self.parents.len()
    }

    pub fn parents(&self, a: usize) -> &[usize] {
        &self.parents[a]
    }

    pub fn children(&self, a: usize) -> &[usize] {
        &self.children[a]
    }

    pub fn d_in(&self, a: usize) -> usize {
        self.parents[a].len()
    }

    pub fn d_out(&self, a: usize) -> usize {
        self.children[a].len()
    }

    /// Edges dropped to break cycles.
    pub fn removed_edges(&self) -> usize {
        self.removed_edges
    }

    /// Nodes ordered so that every child precedes its parents, or `None`
    /// when the adjacency contains a cycle.
    fn children_first_order(&self) -> Option<Vec<usize>> {
        let n = self.node_count();
        let mut pending: Vec<usize> = (0..n).map(|a| self.d_out(a)).collect();
        let mut ready: Vec<usize> = (0..n).filter(|&a| pending[a] == 0).rev().collect();
        let mut order = Vec::with_capacity(n);
        while let Some(a) = ready.pop() {
            order.push(a);
            for &p in &self.parents[a] {
                pending[p] -= 1;
                if pending[p] == 0 {
                    ready.push(p);
                }
            }
        }
        (order.len() == n).then_some(order)
    }
}

pub fn to_dag(corpus: &CitationCorpus) -> KnowledgeTree {
    let edges: Vec<(usize, usize)> = corpus.edges().iter().map(|&(a, b)| (a.0, b.0)).collect();
    let tree = KnowledgeTree::from_citations(corpus.node_count(), &edges);
    if tree.removed_edges > 0 {
        log::warn!("removed {} citation edges to break cycles", tree.removed_edges);
    }
    tree
}

#[derive(Debug, Clone, PartialEq)]
pub struct VolumeTable {
    pub volume: Vec<f64>,
    pub total: f64,
}

pub fn compute_volumes(tree: &KnowledgeTree) -> Result<VolumeTable> {
    let order = tree
        .children_first_order()
        .ok_or_else(|| Error::Contract("knowledge tree contains a cycle".into()))?;
    let mut volume = vec![0.0; tree.node_count()];
    for a in order {
        let inherited: f64 = tree.children[a]
            .iter()
            .map(|&c| volume[c] / tree.d_in(c) as f64)
            .sum();
        volume[a] = tree.d_out(a) as f64 + inherited;
    }
    let total = volume.iter().sum();
    Ok(VolumeTable { volume, total })
}

pub fn kqi_node(tree: &KnowledgeTree, volumes: &VolumeTable, a: usize) -> Result<f64> {
    let d_in = tree.d_in(a);
    let v = volumes.volume[a];
    if d_in == 0 || v == 0.0 {
        return Ok(0.0);
    }
    let d = d_in as f64;
    let weight = v / (d * volumes.total);
    let mut kappa = 0.0;
    for &p in &tree.parents[a] {
        let vp = volumes.volume[p];
        if vp <= 0.0 {
            return Err(Error::Undefined(format!(
                "log of V({a})/V({p}) with parent volume 0"
            )));
        }
        let ratio = v / (d * vp);
        debug_assert!(ratio <= 1.0, "log argument {ratio} > 1 at node {a}");
        let term = -weight * ratio.log2();
        debug_assert!(term >= 0.0);
        kappa += term;
    }
    Ok(kappa)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KqiScore {
    pub kappa: Vec<f64>,
    pub volumes: VolumeTable,
}

impl KqiScore {
    pub fn of(&self, id: NodeId) -> f64 {
        self.kappa[id.0]
    }
}

pub fn kqi_all(tree: &KnowledgeTree) -> Result<KqiScore> {
    let volumes = compute_volumes(tree)?;
    let kappa = (0..tree.node_count())
        .into_par_iter()
        .map(|a| kqi_node(tree, &volumes, a))
        .collect::<Result<Vec<_>>>()?;
    Ok(KqiScore { kappa, volumes })
}

/// Labels from log-transformed scores.
#[derive(Debug, Clone, PartialEq)]
pub struct LogBins {
    pub labels: Vec<usize>,
    /// `ln κ` for positive scores.
    pub log_scores: Vec<Option<f64>>,
    pub thresholds: Vec<f64>,
    /// Every score was zero, so only class 0 is populated.
    pub degenerate: bool,
}

/// Positive scores are log-transformed and split into `n_classes`
/// equal-frequency bins; zero scores go to class 0.
pub fn log_bin(scores: &[f64], n_classes: usize) -> Result<LogBins> {
    if n_classes < 2 {
        return Err(Error::config("n_classes", "need at least 2 classes"));
    }
    let log_scores: Vec<Option<f64>> = scores
        .iter()
        .map(|&k| (k > 0.0).then(|| k.ln()))
        .collect();
    let positive: Vec<f64> = log_scores.iter().flatten().copied().collect();
    let degenerate = positive.is_empty();
    if degenerate {
        log::warn!("all KQI scores are zero; every sample falls in class 0");
    }
    let thresholds = quantile_thresholds(&positive, n_classes);
    let labels = log_scores
        .iter()
        .map(|l| l.map_or(0, |v| bin(v, &thresholds)))
        .collect();
    Ok(LogBins {
        labels,
        log_scores,
        thresholds,
        degenerate,
    })
}

/// Five-number summary of log-KQI within one class.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassSummary {
    pub class: usize,
    pub count: usize,
    pub min: Option<f64>,
    pub q1: Option<f64>,
    pub median: Option<f64>,
    pub q3: Option<f64>,
    pub max: Option<f64>,
}

pub fn class_summaries(bins: &LogBins, n_classes: usize) -> Vec<ClassSummary> {
    (0..n_classes)
        .map(|c| {
            let mut vals: Vec<f64> = bins
                .labels
                .iter()
                .zip(&bins.log_scores)
                .filter(|(&l, _)| l == c)
                .filter_map(|(_, v)| *v)
                .collect();
            vals.sort_by(f64::total_cmp);
            let q = |p: f64| percentile(&vals, p);
            ClassSummary {
                class: c,
                count: bins.labels.iter().filter(|&&l| l == c).count(),
                min: vals.first().copied(),
                q1: q(0.25),
                median: q(0.5),
                q3: q(0.75),
                max: vals.last().copied(),
            }
        })
        .collect()
}

/// Linear-interpolation percentile of sorted values.
fn percentile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64))
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    /// Memoized top-down evaluation straight from the recursive definition.
    fn oracle_volume(t: &KnowledgeTree, a: usize, memo: &mut HashMap<usize, f64>) -> f64 {
        if let Some(&v) = memo.get(&a) {
            return v;
        }
        let mut v = t.children(a).len() as f64;
        for &c in t.children(a) {
            v += oracle_volume(t, c, memo) / t.parents(c).len() as f64;
        }
        memo.insert(a, v);
        v
    }

    fn oracle_kqi(t: &KnowledgeTree) -> Vec<f64> {
        let mut memo = HashMap::new();
        let n = t.node_count();
        let vols: Vec<f64> = (0..n).map(|a| oracle_volume(t, a, &mut memo)).collect();
        let w: f64 = vols.iter().sum();
        (0..n)
            .map(|a| {
                let d = t.parents(a).len() as f64;
                let mut k = 0.0;
                for &p in t.parents(a) {
                    let x = vols[a] / (d * vols[p]);
                    if x > 0.0 {
                        k -= vols[a] / (d * w) * x.log2();
                    }
                }
                k
            })
            .collect()
    }

    fn random_dag(rng: &mut ChaCha8Rng, n: usize) -> Vec<(usize, usize)> {
        // Later nodes cite earlier ones, then ids are shuffled.
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        let mut edges = Vec::new();
        for a in 1..n {
            for b in 0..a {
                if rng.random_bool(0.15) {
                    edges.push((perm[a], perm[b]));
                }
            }
        }
        edges
    }

    fn chain() -> KnowledgeTree {
        // B cites A, C cites B with A=0, B=1, C=2
        KnowledgeTree::from_citations(3, &[(1, 0), (2, 1)])
    }

    fn diamond() -> KnowledgeTree {
        // A=0 parent of B=1, C=2; both parents of D=3
        KnowledgeTree::from_citations(4, &[(1, 0), (2, 0), (3, 1), (3, 2)])
    }

    #[test]
    fn chain_orientation() {
        let t = chain();
        assert_eq!(t.parents(2), &[1]);
        assert_eq!(t.children(0), &[1]);
    }

    #[test]
    fn two_cycle_repaired() {
        let t = KnowledgeTree::from_citations(2, &[(0, 1), (1, 0)]);
        assert_eq!(t.removed_edges(), 1);
        assert!(compute_volumes(&t).is_ok());
    }

    #[test]
    fn random_graphs_become_acyclic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let edges: Vec<(usize, usize)> = (0..400)
            .map(|_| (rng.random_range(0..100), rng.random_range(0..100)))
            .collect();
        let t = KnowledgeTree::from_citations(100, &edges);
        assert!(t.removed_edges() > 0);
        // Topological-sort check: every node gets a position and all
        // citing nodes come before the nodes they cite.
        let order = t.children_first_order().expect("acyclic");
        let mut pos = vec![0; 100];
        for (i, &a) in order.iter().enumerate() {
            pos[a] = i;
        }
        for a in 0..100 {
            for &p in t.parents(a) {
                assert!(pos[a] < pos[p]);
            }
        }
    }

    #[test]
    fn volumes_of_small_trees() {
        let single = KnowledgeTree::from_citations(1, &[]);
        let v = compute_volumes(&single).unwrap();
        assert_eq!((v.volume[0], v.total), (0.0, 0.0));

        let v = compute_volumes(&chain()).unwrap();
        assert_eq!(v.volume, vec![2.0, 1.0, 0.0]);
        assert_eq!(v.total, 3.0);

        let v = compute_volumes(&diamond()).unwrap();
        assert_eq!(v.volume, vec![4.0, 1.0, 1.0, 0.0]);
        assert_eq!(v.total, 6.0);
    }

    #[test]
    fn cyclic_adjacency_is_contract_error() {
        let t = KnowledgeTree {
            parents: vec![vec![1], vec![0]],
            children: vec![vec![1], vec![0]],
            removed_edges: 0,
        };
        assert!(matches!(compute_volumes(&t), Err(Error::Contract(_))));
    }

    #[test]
    fn kqi_small_trees() {
        let k = kqi_all(&chain()).unwrap().kappa;
        assert_eq!(k[0], 0.0);
        assert!((k[1] - 1.0 / 3.0).abs() <= 1e-12);
        assert_eq!(k[2], 0.0);
        let k = kqi_all(&diamond()).unwrap().kappa;
        assert!((k[1] - 1.0 / 3.0).abs() <= 1e-12);
        assert!((k[2] - 1.0 / 3.0).abs() <= 1e-12);
        assert_eq!((k[0], k[3]), (0.0, 0.0));
    }

    #[test]
    fn edgeless_is_zero() {
        let k = kqi_all(&KnowledgeTree::from_citations(5, &[])).unwrap().kappa;
        assert!(k.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn random_dags_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let n = rng.random_range(1..=50);
            let edges = random_dag(&mut rng, n);
            let t = KnowledgeTree::from_citations(n, &edges);
            assert_eq!(t.removed_edges(), 0);
            let got = kqi_all(&t).unwrap();
            let mut memo = HashMap::new();
            for a in 0..n {
                let want = oracle_volume(&t, a, &mut memo);
                assert!((got.volumes.volume[a] - want).abs() <= 1e-9);
                // conservation: V - d_out equals the inherited share
                let inherited: f64 = t
                    .children(a)
                    .iter()
                    .map(|&c| got.volumes.volume[c] / t.d_in(c) as f64)
                    .sum();
                assert!((got.volumes.volume[a] - t.d_out(a) as f64 - inherited).abs() <= 1e-12);
            }
            for (g, w) in got.kappa.iter().zip(oracle_kqi(&t)) {
                assert!((g - w).abs() <= 1e-9);
                assert!(*g >= 0.0);
            }
        }
    }

    #[test]
    fn two_hundred_node_dag_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let edges = random_dag(&mut rng, 200);
        let t = KnowledgeTree::from_citations(200, &edges);
        let got = kqi_all(&t).unwrap().kappa;
        for (g, w) in got.iter().zip(oracle_kqi(&t)) {
            assert!((g - w).abs() <= 1e-9);
        }
    }

    #[test]
    fn relabeling_permutes_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 40;
        let edges = random_dag(&mut rng, n);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let relabeled: Vec<(usize, usize)> = edges.iter().map(|&(a, b)| (perm[a], perm[b])).collect();
        let k1 = kqi_all(&KnowledgeTree::from_citations(n, &edges)).unwrap().kappa;
        let k2 = kqi_all(&KnowledgeTree::from_citations(n, &relabeled)).unwrap().kappa;
        for a in 0..n {
            assert!((k1[a] - k2[perm[a]]).abs() <= 1e-12);
        }
    }

    #[test]
    fn log_bin_cases() {
        let b = log_bin(&[0.0, 0.0, 0.0], 2).unwrap();
        assert!(b.degenerate);
        assert_eq!(b.labels, vec![0, 0, 0]);

        let b = log_bin(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6], 2).unwrap();
        assert_eq!(b.labels, vec![0, 0, 0, 1, 1, 1]);

        let b = log_bin(&[0.0, 1e-3, 2e-3], 2).unwrap();
        assert_eq!(b.labels[0], 0);
        assert!(log_bin(&[1.0], 1).is_err());
    }

    #[test]
    fn log_normal_median_split() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let scores: Vec<f64> = (0..1000)
            .map(|_| {
                // Box-Muller normal, exponentiated
                let (u1, u2): (f64, f64) = (rng.random(), rng.random());
                let z = (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
                (z * 2.0 - 14.0).exp()
            })
            .collect();
        let b = log_bin(&scores, 2).unwrap();
        let ones = b.labels.iter().filter(|&&l| l == 1).count();
        assert!((ones as i64 - 500).abs() <= 1, "{ones}");
    }

    #[test]
    fn summaries() {
        let b = log_bin(&[1.0, 2.0, 3.0, 4.0, 0.0], 2).unwrap();
        let s = class_summaries(&b, 2);
        assert_eq!(s[0].count, 3);
        assert_eq!(s[0].min, Some(0.0));
        assert_eq!(s[1].max, Some(4f64.ln()));
    }
}
