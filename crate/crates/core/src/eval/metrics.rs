//! Classification metrics.

use crate::numerics::{Real, Tensor};
use crate::{Error, Result};

fn check_pair(pred: &[usize], truth: &[usize]) -> Result<()> {
    if pred.is_empty() {
        return Err(Error::Contract("metric over zero samples".into()));
    }
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

/// Fraction of exact matches.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_pair(pred, truth)?;
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// `confusion[t][p]` counts.
pub fn confusion(pred: &[usize], truth: &[usize], n_classes: usize) -> Result<Vec<Vec<usize>>> {
    check_pair(pred, truth)?;
    let mut m = vec![vec![0; n_classes]; n_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if p >= n_classes || t >= n_classes {
            return Err(Error::Index(format!(
                "class {} out of range for {n_classes} classes",
                p.max(t)
            )));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

/// Unweighted mean of per-class F1. A class absent from both predictions
/// and labels scores 0.
#[allow(clippy::needless_range_loop)]
pub fn macro_f1(pred: &[usize], truth: &[usize], n_classes: usize) -> Result<f64> {
    let m = confusion(pred, truth, n_classes)?;
    let mut total = 0.0;
    for c in 0..n_classes {
        let tp = m[c][c] as f64;
        let predicted: usize = (0..n_classes).map(|t| m[t][c]).sum();
        let actual: usize = m[c].iter().sum();
        if predicted + actual == 0 {
            log::warn!("class {c} absent from predictions and labels; its F1 counts as 0");
            continue;
        }
        total += 2.0 * tp / (predicted + actual) as f64;
    }
    Ok(total / n_classes as f64)
}

/// Probability that a random positive outranks a random negative, ties
/// counting one half. `None` when either group is empty.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    // rank-sum over tie groups
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * idx[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// AUC from class probabilities `[N, C]`: the class-1 column for two
/// classes, otherwise the macro mean of one-vs-rest AUCs over classes that
/// have both positives and negatives.
pub fn auc_ovr<T: Real>(probs: &Tensor<T>, truth: &[usize]) -> Result<f64> {
    let c = probs.last_dim();
    if probs.rows() != truth.len() || truth.is_empty() {
        return Err(Error::Shape(format!(
            "{} probability rows for {} labels",
            probs.rows(),
            truth.len()
        )));
    }
    for row in probs.data().chunks(c) {
        let s: f64 = row.iter().map(|v| v.as_f64()).sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(Error::Contract(format!("probability row sums to {s}")));
        }
    }
    if let Some(&bad) = truth.iter().find(|&&t| t >= c) {
        return Err(Error::Index(format!("label {bad} out of range for {c} classes")));
    }
    let column = |k: usize| -> Vec<f64> { probs.data().chunks(c).map(|r| r[k].as_f64()).collect() };
    let classes: Vec<usize> = if c == 2 { vec![1] } else { (0..c).collect() };
    let mut aucs = Vec::new();
    for k in classes {
        let pos: Vec<bool> = truth.iter().map(|&t| t == k).collect();
        match binary_auc(&column(k), &pos) {
            Some(a) => aucs.push(a),
            None => log::warn!("AUC for class {k} skipped: no positives or no negatives"),
        }
    }
    if aucs.is_empty() {
        return Err(Error::Undefined("AUC undefined: every class was skipped".into()));
    }
    Ok(aucs.iter().sum::<f64>() / aucs.len() as f64)
}
