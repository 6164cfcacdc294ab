//! Synthetic citation corpus with a learnable two-class labelling.
//!
//! Each sample paper cites a few papers from a shared reference pool and
//! is cited by a random number of citing papers. Metadata column 0 is the
//! z-scored `log1p(in-degree)`, column 1 a planted signal and the rest
//! noise; embeddings are noise. A sample's label is whether column 0 plus
//! column 1 exceeds the median over samples.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::graph::{CitationCorpus, NodeId, PaperNode};
use crate::{Error, Result};

/// Original ids start here so ingestion has to remap them.
const ID_BASE: u64 = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub pool: usize,
    pub max_references: usize,
    pub max_citers: usize,
    pub f_meta: usize,
    pub f_embed: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_samples: 500,
            pool: 600,
            max_references: 6,
            max_citers: 12,
            f_meta: 4,
            f_embed: 8,
            seed: 0,
        }
    }
}

pub struct SynthCorpus {
    pub corpus: CitationCorpus,
    pub samples: Vec<NodeId>,
    /// Class of each entry of `samples`.
    pub labels: Vec<usize>,
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    if cfg.n_samples < 2 || cfg.pool == 0 || cfg.max_references == 0 || cfg.f_meta < 2 || cfg.f_embed == 0 {
        return Err(Error::config("synth", format!("degenerate generator settings {cfg:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let first_sample = cfg.pool;
    let mut edges: Vec<(usize, usize)> = Vec::new();
    let mut next = cfg.pool + cfg.n_samples;
    for s in 0..cfg.n_samples {
        let center = first_sample + s;
        let k = rng.random_range(1..=cfg.max_references.min(cfg.pool));
        for r in sample(&mut rng, cfg.pool, k).into_iter() {
            edges.push((center, r));
        }
        for _ in 0..rng.random_range(0..=cfg.max_citers) {
            edges.push((next, center));
            edges.push((next, rng.random_range(0..cfg.pool)));
            next += 1;
        }
    }
    let n = next;

    let mut in_degree = vec![0usize; n];
    edges.sort_unstable();
    edges.dedup();
    for &(_, b) in &edges {
        in_degree[b] += 1;
    }
    let logs: Vec<f64> = in_degree.iter().map(|&d| (d as f64).ln_1p()).collect();
    let mean = logs.iter().sum::<f64>() / n as f64;
    let std = (logs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();

    let normal = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
    let nodes: Vec<PaperNode> = (0..n)
        .map(|i| {
            let mut meta = vec![if std > 0.0 { (logs[i] - mean) / std } else { 0.0 }];
            meta.extend((1..cfg.f_meta).map(|_| normal(&mut rng)));
            let embedding = (0..cfg.f_embed).map(|_| 0.5 * normal(&mut rng)).collect();
            PaperNode {
                id: NodeId(i),
                original_id: ID_BASE + i as u64,
                year: Some(rng.random_range(1980..=2020)),
                meta,
                embedding,
            }
        })
        .collect();

    let samples: Vec<NodeId> = (first_sample..first_sample + cfg.n_samples).map(NodeId).collect();
    let score: Vec<f64> = samples
        .iter()
        .map(|id| nodes[id.0].meta[0] + nodes[id.0].meta[1])
        .collect();
    let mut sorted = score.clone();
    sorted.sort_by(f64::total_cmp);
    let median = (sorted[(sorted.len() - 1) / 2] + sorted[sorted.len() / 2]) / 2.0;
    let labels = score.iter().map(|&s| usize::from(s > median)).collect();

    let (corpus, _) = CitationCorpus::new(
        nodes,
        edges.into_iter().map(|(a, b)| (NodeId(a), NodeId(b))),
        cfg.f_meta,
        cfg.f_embed,
    )?;
    Ok(SynthCorpus {
        corpus,
        samples,
        labels,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthFiles {
    pub edges: PathBuf,
    pub meta: PathBuf,
    pub embed: PathBuf,
    pub years: PathBuf,
    pub labels: PathBuf,
}

/// Writes ingestible CSVs (edges without a header) into `dir`.
pub fn write_files(s: &SynthCorpus, dir: &Path) -> Result<SynthFiles> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let c = &s.corpus;
    let oid = |id: NodeId| c.original_id(id);
    let mut edges = String::new();
    for &(a, b) in c.edges() {
        writeln!(edges, "{},{}", oid(a), oid(b)).unwrap();
    }
    let table = |prefix: &str, width: usize, row: &dyn Fn(&PaperNode) -> &[f64]| {
        let mut out = String::from("id");
        for k in 0..width {
            write!(out, ",{prefix}{k}").unwrap();
        }
        out.push('\n');
        for node in c.nodes() {
            write!(out, "{}", node.original_id).unwrap();
            for v in row(node) {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    };
    let meta = table("f", c.f_meta(), &|n| &n.meta);
    let embed = table("e", c.f_embed(), &|n| &n.embedding);
    let mut years = String::from("id,year\n");
    for node in c.nodes() {
        let y = node.year.map(|y| y.to_string()).unwrap_or_default();
        writeln!(years, "{},{y}", node.original_id).unwrap();
    }
    let mut labels = String::from("id,label\n");
    for (&id, &l) in s.samples.iter().zip(&s.labels) {
        writeln!(labels, "{},{l}", oid(id)).unwrap();
    }
    let files = SynthFiles {
        edges: dir.join("edges.csv"),
        meta: dir.join("meta.csv"),
        embed: dir.join("embed.csv"),
        years: dir.join("years.csv"),
        labels: dir.join("labels.csv"),
    };
    for (path, text) in [
        (&files.edges, edges),
        (&files.meta, meta),
        (&files.embed, embed),
        (&files.years, years),
        (&files.labels, labels),
    ] {
        fs::write(path, text).map_err(|e| Error::io(path, e))?;
    }
    Ok(files)
}
