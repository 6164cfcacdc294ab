//! Command implementations.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use serde::Serialize;

use emkken_core::eval::{ablation_csv, run_ablation, run_trials, sweep_d_state, EgoDataset, MetricsReport};
use emkken_core::graph::{
    build_ego_networks, ingest_corpus, read_corpus, read_provided_labels, summarize_stats, IngestPaths,
    IngestReport, StatsSummary,
};
use emkken_core::kqi::{class_summaries, kqi_all, log_bin, to_dag, ClassSummary};
use emkken_core::numerics::Real;
use emkken_core::synth::{generate, write_files, SynthConfig};
use emkken_core::{CitationCorpus, EmkKenConfig, EmkKenModel, Error, LabelCriterion};

use crate::output::{Outputs, RunInfo};
use crate::plot::{parse_csv, render_svg, PlotInputError};
use crate::{Cli, Command, DataArgs, Global};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Precision {
    F32,
    F64,
}

impl Precision {
    fn from_env() -> Result<Self> {
        match std::env::var("EMKKEN_PRECISION").as_deref() {
            Err(_) | Ok("64") => Ok(Precision::F64),
            Ok("32") => Ok(Precision::F32),
            Ok(other) => Err(Error::config("EMKKEN_PRECISION", format!("expected 32 or 64, got `{other}`")).into()),
        }
    }

    fn bits(self) -> u32 {
        match self {
            Precision::F32 => 32,
            Precision::F64 => 64,
        }
    }
}

/// Process exit status for an error chain.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.chain().any(|e| e.is::<PlotInputError>()) {
        return 6;
    }
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::Parse { .. } | Error::Schema(_) | Error::Io { .. } | Error::Lookup(_)) => 2,
        Some(Error::Degenerate(_)) => 3,
        Some(Error::Divergence(_) | Error::NonFinite(_)) => 4,
        Some(Error::Config { .. }) => 5,
        _ => 1,
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    let precision = Precision::from_env()?;
    let cfg = load_config(g)?;
    let mut out = Outputs::create(&g.out)?;
    let mut inputs = Vec::new();
    let mut incomplete = None;
    let name = match &cli.command {
        Command::Ingest { edges, meta, embed, years, edge_header } => {
            let paths = IngestPaths {
                edges: edges.clone(),
                meta: meta.clone(),
                embed: embed.clone(),
                years: years.clone(),
                edge_header: *edge_header,
            };
            inputs.extend([edges.clone(), meta.clone(), embed.clone()]);
            inputs.extend(years.clone());
            ingest(&paths, &cfg, &mut out)?;
            "ingest"
        }
        Command::Kqi { corpus, n_classes, labels } => {
            inputs.push(corpus.clone());
            kqi(corpus, n_classes.unwrap_or(cfg.n_classes), *labels, &mut out)?;
            "kqi"
        }
        Command::Label { data } => {
            let (ds, cfg) = dataset(data, &cfg, &mut inputs)?;
            label(&ds.1, &ds.0, &cfg, &mut out)?;
            "label"
        }
        Command::Train { data } => {
            let ((_, ds), cfg) = dataset(data, &cfg, &mut inputs)?;
            match precision {
                Precision::F32 => train::<f32>(&ds, &cfg, &mut out)?,
                Precision::F64 => train::<f64>(&ds, &cfg, &mut out)?,
            }
            "train"
        }
        Command::Eval { data, trials, checkpoint } => {
            let ((_, ds), cfg) = dataset(data, &cfg, &mut inputs)?;
            if let Some(ck) = checkpoint {
                inputs.push(ck.clone());
                match precision {
                    Precision::F32 => eval_checkpoint::<f32>(&ds, &cfg, ck, &mut out)?,
                    Precision::F64 => eval_checkpoint::<f64>(&ds, &cfg, ck, &mut out)?,
                }
            } else {
                let n = trials.unwrap_or(cfg.n_trials);
                let report = match precision {
                    Precision::F32 => run_trials::<f32>(&ds, &cfg, n, g.jobs)?,
                    Precision::F64 => run_trials::<f64>(&ds, &cfg, n, g.jobs)?,
                };
                out.write_json("report.json", &report)?;
                out.write("trials.csv", report.trials_csv())?;
                incomplete = failures(std::slice::from_ref(&report));
            }
            "eval"
        }
        Command::Sweep { data, axis, grid, trials } => {
            let ((_, ds), cfg) = dataset(data, &cfg, &mut inputs)?;
            let grid = grid.clone().unwrap_or_else(|| axis.default_grid());
            let n = trials.unwrap_or(cfg.n_trials);
            let result = match precision {
                Precision::F32 => sweep_d_state::<f32>(&ds, &cfg, *axis, &grid, n, g.jobs)?,
                Precision::F64 => sweep_d_state::<f64>(&ds, &cfg, *axis, &grid, n, g.jobs)?,
            };
            out.write_json("sweep.json", &result)?;
            out.write(&format!("sweep_{axis}.csv"), result.to_csv())?;
            let reports: Vec<MetricsReport> = result.points.into_iter().map(|p| p.report).collect();
            incomplete = failures(&reports);
            "sweep"
        }
        Command::Ablate { data, trials } => {
            let ((_, ds), cfg) = dataset(data, &cfg, &mut inputs)?;
            let n = trials.unwrap_or(cfg.n_trials);
            let rows = match precision {
                Precision::F32 => run_ablation::<f32>(&ds, &cfg, n, g.jobs)?,
                Precision::F64 => run_ablation::<f64>(&ds, &cfg, n, g.jobs)?,
            };
            out.write_json("ablation.json", &rows)?;
            out.write("ablation.csv", ablation_csv(&rows))?;
            let reports: Vec<MetricsReport> = rows.into_iter().map(|r| r.report).collect();
            incomplete = failures(&reports);
            "ablate"
        }
        Command::Plot { input } => {
            inputs.push(input.clone());
            plot(input, &mut out)?;
            "plot"
        }
        Command::Synth { n_samples, pool } => {
            let sc = SynthConfig { n_samples: *n_samples, pool: *pool, seed: cfg.seed, ..SynthConfig::default() };
            synth(&sc, &mut out)?;
            "synth"
        }
    };
    out.finish(RunInfo {
        command: name,
        config: g.config.as_deref(),
        inputs,
        seed: cfg.seed,
        precision: precision.bits(),
    })?;
    match incomplete {
        Some(msg) => Err(Error::Divergence(msg).into()),
        None => Ok(()),
    }
}

fn load_config(g: &Global) -> Result<EmkKenConfig> {
    let base = match &g.config {
        Some(p) => EmkKenConfig::load(p)?,
        None => EmkKenConfig::default(),
    };
    let mut cfg = base.with_overrides(&g.sets)?;
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn failures(reports: &[MetricsReport]) -> Option<String> {
    let failed: usize = reports.iter().map(|r| r.failures.len()).sum();
    let total: usize = reports.iter().map(|r| r.n_trials).sum();
    (failed > 0).then(|| format!("{failed} of {total} trials diverged; outputs mark them incomplete"))
}

type Loaded = ((CitationCorpus, EgoDataset), EmkKenConfig);

/// Corpus archive plus samples, with `--labels` switching to provided labels.
fn dataset(data: &DataArgs, cfg: &EmkKenConfig, inputs: &mut Vec<PathBuf>) -> Result<Loaded> {
    inputs.push(data.corpus.clone());
    let corpus = read_corpus(&data.corpus)?;
    let mut cfg = cfg.clone();
    if let Some(p) = &data.labels {
        cfg.label = LabelCriterion::Provided { path: Some(p.clone()) };
    }
    let provided = match &cfg.label {
        LabelCriterion::Provided { path: Some(p) } => {
            inputs.push(p.clone());
            Some(read_provided_labels(p)?)
        }
        _ => None,
    };
    let ds = EgoDataset::build(&corpus, &cfg, provided.as_ref())?;
    let (f_meta, f_embed) = ds.widths();
    let cfg = cfg.resolve_widths(f_meta, f_embed)?;
    Ok(((corpus, ds), cfg))
}

#[derive(Serialize)]
struct IngestStats<'a> {
    ingest: &'a IngestReport,
    min_references: usize,
    ego_networks: &'a StatsSummary,
}

fn ingest(paths: &IngestPaths, cfg: &EmkKenConfig, out: &mut Outputs) -> Result<()> {
    let (corpus, report) = ingest_corpus(paths)?;
    let centers = emkken_core::eval::select_centers(&corpus, cfg.min_references, None)?;
    let egos = build_ego_networks(&corpus, &centers)?;
    let summary = summarize_stats(&corpus, &egos);
    out.write("corpus.bin", emkken_core::graph::encode_corpus(&corpus)?)?;
    out.write_json(
        "stats.json",
        &IngestStats { ingest: &report, min_references: cfg.min_references, ego_networks: &summary },
    )?;
    log::info!("{} papers, {} citations", report.node_count, report.edge_count);
    Ok(())
}

#[derive(Serialize)]
struct KqiSummary {
    n_classes: usize,
    nodes: usize,
    removed_cycle_edges: usize,
    total_volume: f64,
    degenerate: bool,
    log_thresholds: Vec<f64>,
    classes: Vec<ClassSummary>,
}

fn kqi(corpus_path: &Path, n_classes: usize, want_labels: bool, out: &mut Outputs) -> Result<()> {
    let corpus = read_corpus(corpus_path)?;
    let tree = to_dag(&corpus);
    let scores = kqi_all(&tree)?;
    let bins = log_bin(&scores.kappa, n_classes)?;
    if want_labels && bins.degenerate {
        return Err(Error::Degenerate("every KQI score is zero; refusing to emit labels".into()).into());
    }
    let mut csv = String::from("id,volume,kappa,log_kappa,label\n");
    let mut labels = String::from("id,label\n");
    for i in 0..corpus.node_count() {
        let id = corpus.original_id(emkken_core::NodeId(i));
        let log_k = bins.log_scores[i].map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            csv,
            "{id},{},{},{log_k},{}",
            scores.volumes.volume[i], scores.kappa[i], bins.labels[i]
        );
        let _ = writeln!(labels, "{id},{}", bins.labels[i]);
    }
    out.write("kqi.csv", csv)?;
    out.write_json(
        "kqi_summary.json",
        &KqiSummary {
            n_classes,
            nodes: corpus.node_count(),
            removed_cycle_edges: tree.removed_edges(),
            total_volume: scores.volumes.total,
            degenerate: bins.degenerate,
            log_thresholds: bins.thresholds.clone(),
            classes: class_summaries(&bins, n_classes),
        },
    )?;
    if want_labels {
        out.write("kqi_labels.csv", labels)?;
    }
    Ok(())
}

fn label(ds: &EgoDataset, corpus: &CitationCorpus, cfg: &EmkKenConfig, out: &mut Outputs) -> Result<()> {
    let prepared = ds.prepare(cfg.split, cfg.seed)?;
    let mut csv = String::from("id,label\n");
    for (&c, &l) in ds.centers().iter().zip(&prepared.labels) {
        let _ = writeln!(csv, "{},{l}", corpus.original_id(c));
    }
    let mut counts = BTreeMap::new();
    for &l in &prepared.labels {
        *counts.entry(l).or_insert(0usize) += 1;
    }
    out.write("labels.csv", csv)?;
    out.write_json("split.json", &prepared.split)?;
    log::info!("class counts {counts:?}");
    Ok(())
}

#[derive(Serialize)]
struct TestMetrics {
    seed: u64,
    n_test: usize,
    loss: f64,
    acc: f64,
    f1: f64,
    auc: Option<f64>,
}

fn train<T: Real>(ds: &EgoDataset, cfg: &EmkKenConfig, out: &mut Outputs) -> Result<()> {
    let prepared = ds.prepare(cfg.split, cfg.seed)?;
    let mut model = EmkKenModel::<T>::new(cfg, cfg.seed)?;
    let history = model.train(&prepared.train, &prepared.validation)?;
    model.save(&out.path("model.ckpt"))?;
    out.record("model.ckpt")?;
    out.write("history.csv", history.to_csv())?;
    out.write_json("config.json", cfg)?;
    if !prepared.test.is_empty() {
        let ev = model.evaluate(&prepared.test)?;
        out.write_json(
            "test_metrics.json",
            &TestMetrics { seed: cfg.seed, n_test: prepared.test.len(), loss: ev.loss, acc: ev.acc, f1: ev.f1, auc: ev.auc },
        )?;
    }
    Ok(())
}

fn eval_checkpoint<T: Real>(ds: &EgoDataset, cfg: &EmkKenConfig, ck: &Path, out: &mut Outputs) -> Result<()> {
    let prepared = ds.prepare(cfg.split, cfg.seed)?;
    let mut model = EmkKenModel::<T>::new(cfg, cfg.seed)?;
    model.load(ck).with_context(|| format!("loading checkpoint {}", ck.display()))?;
    let ev = model.evaluate(&prepared.test)?;
    out.write_json(
        "test_metrics.json",
        &TestMetrics { seed: cfg.seed, n_test: prepared.test.len(), loss: ev.loss, acc: ev.acc, f1: ev.f1, auc: ev.auc },
    )
}

fn plot(input: &Path, out: &mut Outputs) -> Result<()> {
    let text = fs::read_to_string(input)
        .map_err(|e| PlotInputError(format!("{}: {e}", input.display())))?;
    let data = parse_csv(&text).map_err(|e| anyhow!(e).context(format!("plotting {}", input.display())))?;
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("plot");
    for (metric, series) in &data.metrics {
        let svg = render_svg(&format!("{stem}: {metric}"), data.x_label, series);
        out.write(&format!("{stem}_{metric}.svg"), svg)?;
    }
    Ok(())
}

fn synth(sc: &SynthConfig, out: &mut Outputs) -> Result<()> {
    let s = generate(sc)?;
    let files = write_files(&s, &out.path(""))?;
    for p in [&files.edges, &files.meta, &files.embed, &files.years, &files.labels] {
        let name = p.file_name().and_then(|n| n.to_str()).expect("generated file name");
        out.record(name)?;
    }
    Ok(())
}
