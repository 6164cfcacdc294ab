//! Repeated trials, d_state sweeps and the ablation table.

use std::fmt::{self, Write as _};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EgoDataset;
use crate::model::{Ablation, EmkKenConfig, EmkKenModel};
use crate::numerics::Real;
use crate::{Error, Result};

/// Mean and population standard deviation over the trials that finished.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    /// One entry per requested trial; `None` where the trial failed or the
    /// metric was undefined.
    pub per_trial: Vec<Option<f64>>,
}

impl MetricSummary {
    pub fn new(per_trial: Vec<Option<f64>>) -> Self {
        let xs: Vec<f64> = per_trial.iter().flatten().copied().collect();
        if xs.is_empty() {
            return MetricSummary { mean: None, std: None, per_trial };
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        MetricSummary { mean: Some(mean), std: Some(var.sqrt()), per_trial }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub acc: f64,
    pub f1: f64,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub trial: usize,
    pub seed: u64,
    pub error: String,
}

/// Test-split metrics over repeated trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_trials: usize,
    pub base_seed: u64,
    pub acc: MetricSummary,
    pub macro_f1: MetricSummary,
    pub auc: MetricSummary,
    pub trials: Vec<TrialResult>,
    pub failures: Vec<TrialFailure>,
}

impl MetricsReport {
    pub fn complete(&self) -> bool {
        self.failures.is_empty()
    }

    /// Flat `trial,seed,acc,f1,auc` rows; failed trials are omitted and
    /// undefined values left empty.
    pub fn trials_csv(&self) -> String {
        let mut s = String::from("trial,seed,acc,f1,auc\n");
        for t in &self.trials {
            let _ = writeln!(s, "{},{},{},{},{}", t.trial, t.seed, t.acc, t.f1, opt(t.auc));
        }
        s
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// One training run on the split for `seed`; returns test metrics.
pub fn run_trial<T: Real>(data: &EgoDataset, cfg: &EmkKenConfig, trial: usize, seed: u64) -> Result<TrialResult> {
    let (f_meta, f_embed) = data.widths();
    let cfg = EmkKenConfig { seed, ..cfg.resolve_widths(f_meta, f_embed)? };
    let prepared = data.prepare(cfg.split, seed)?;
    let mut model = EmkKenModel::<T>::new(&cfg, seed)?;
    model.train(&prepared.train, &prepared.validation)?;
    let ev = model.evaluate(&prepared.test)?;
    Ok(TrialResult { trial, seed, acc: ev.acc, f1: ev.f1, auc: ev.auc })
}

/// Trial `i` uses seed `cfg.seed + i` for both the split and the
/// initialization. Diverged trials are recorded in `failures`; any other
/// error aborts. With `jobs > 1` trials run on a dedicated pool and are
/// merged back in trial order.
pub fn run_trials<T: Real>(data: &EgoDataset, cfg: &EmkKenConfig, n_trials: usize, jobs: usize) -> Result<MetricsReport> {
    if n_trials == 0 {
        return Err(Error::config("n_trials", "need at least one trial"));
    }
    cfg.validate()?;
    let seeds: Vec<(usize, u64)> = (0..n_trials).map(|i| (i, cfg.seed.wrapping_add(i as u64))).collect();
    let one = |&(i, seed): &(usize, u64)| (i, seed, run_trial::<T>(data, cfg, i, seed));
    let outcomes: Vec<_> = if jobs > 1 {
        pool(jobs)?.install(|| seeds.par_iter().map(one).collect())
    } else {
        seeds.iter().map(one).collect()
    };

    let mut trials = Vec::new();
    let mut failures = Vec::new();
    for (trial, seed, outcome) in outcomes {
        match outcome {
            Ok(r) => trials.push(r),
            Err(e @ (Error::Divergence(_) | Error::NonFinite(_))) => {
                log::warn!("trial {trial} (seed {seed}) failed: {e}");
                failures.push(TrialFailure { trial, seed, error: e.to_string() });
            }
            Err(e) => return Err(e),
        }
    }
    let column = |f: fn(&TrialResult) -> Option<f64>| {
        let mut v = vec![None; n_trials];
        for t in &trials {
            v[t.trial] = f(t);
        }
        MetricSummary::new(v)
    };
    Ok(MetricsReport {
        n_trials,
        base_seed: cfg.seed,
        acc: column(|t| Some(t.acc)),
        macro_f1: column(|t| Some(t.f1)),
        auc: column(|t| t.auc),
        trials,
        failures,
    })
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::config("jobs", e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    DState1,
    DState2,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::DState1 => "d_state1",
            SweepAxis::DState2 => "d_state2",
        }
    }

    pub fn default_grid(self) -> Vec<usize> {
        match self {
            SweepAxis::DState1 => vec![1, 2, 4, 8, 16],
            SweepAxis::DState2 => vec![8, 16, 32, 64, 120],
        }
    }

    fn apply(self, cfg: &EmkKenConfig, value: usize) -> EmkKenConfig {
        let mut c = cfg.clone();
        match self {
            SweepAxis::DState1 => c.d_state1 = value,
            SweepAxis::DState2 => c.d_state2 = value,
        }
        c
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "d_state1" => Ok(SweepAxis::DState1),
            "d_state2" => Ok(SweepAxis::DState2),
            _ => Err(Error::config("axis", format!("unknown sweep axis `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: usize,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub grid: Vec<usize>,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    /// `axis_value,acc,f1,auc` with trial means.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("axis_value,acc,f1,auc\n");
        for p in &self.points {
            let r = &p.report;
            let _ = writeln!(
                s,
                "{},{},{},{}",
                p.value,
                opt(r.acc.mean),
                opt(r.macro_f1.mean),
                opt(r.auc.mean)
            );
        }
        s
    }
}

/// One [`run_trials`] per grid value, everything else fixed.
pub fn sweep_d_state<T: Real>(
    data: &EgoDataset,
    cfg: &EmkKenConfig,
    axis: SweepAxis,
    grid: &[usize],
    n_trials: usize,
    jobs: usize,
) -> Result<SweepResult> {
    if grid.is_empty() {
        return Err(Error::config("grid", "empty sweep grid"));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config("grid", format!("grid must be strictly increasing, got {grid:?}")));
    }
    let configs: Vec<EmkKenConfig> = grid.iter().map(|&v| axis.apply(cfg, v)).collect();
    for c in &configs {
        c.validate()?;
    }
    let points = grid
        .iter()
        .zip(&configs)
        .map(|(&value, c)| Ok(SweepPoint { value, report: run_trials::<T>(data, c, n_trials, jobs)? }))
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult { axis, grid: grid.to_vec(), points })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub ablation: Ablation,
    pub parameter_count: usize,
    pub report: MetricsReport,
}

/// The full model followed by each single-component removal.
pub fn run_ablation<T: Real>(data: &EgoDataset, cfg: &EmkKenConfig, n_trials: usize, jobs: usize) -> Result<Vec<AblationRow>> {
    let (f_meta, f_embed) = data.widths();
    Ablation::table()
        .into_iter()
        .map(|(variant, ablation)| {
            let c = EmkKenConfig { ablation, ..cfg.resolve_widths(f_meta, f_embed)? };
            let parameter_count = EmkKenModel::<T>::new(&c, c.seed)?.parameter_count();
            Ok(AblationRow {
                variant: variant.to_string(),
                ablation,
                parameter_count,
                report: run_trials::<T>(data, &c, n_trials, jobs)?,
            })
        })
        .collect()
}

/// Table-shaped CSV: one row per variant, mean and std of each metric.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("variant,acc_mean,acc_std,f1_mean,f1_std,auc_mean,auc_std\n");
    for r in rows {
        let m = &r.report;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.variant,
            opt(m.acc.mean),
            opt(m.acc.std),
            opt(m.macro_f1.mean),
            opt(m.macro_f1.std),
            opt(m.auc.mean),
            opt(m.auc.std)
        );
    }
    s
}
