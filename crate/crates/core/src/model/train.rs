//! Mini-batch training loop and evaluation passes.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{BatchInput, EmkKenModel, Sample};
use crate::eval::{accuracy, auc_ovr, macro_f1};
use crate::numerics::{AdamConfig, AdamState, Mode, Real, Tape, Tensor};
use crate::{Error, Result};

/// Offset separating the training stream from the initialization stream.
const TRAIN_STREAM: u64 = 0x005e_ed0f_7a11;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// `train` or `validation`
    pub split: &'static str,
    pub loss: f64,
    pub acc: f64,
    pub f1: f64,
    /// Absent when a split holds a single class.
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,split,loss,acc,f1,auc\n");
        for r in &self.records {
            let auc = r.auc.map(|a| a.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{},{},{},{}", r.epoch, r.split, r.loss, r.acc, r.f1, auc).unwrap();
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation<T> {
    pub loss: f64,
    pub acc: f64,
    pub f1: f64,
    pub auc: Option<f64>,
    pub probs: Tensor<T>,
}

fn metrics<T: Real>(probs: &Tensor<T>, labels: &[usize], n_classes: usize) -> Result<(f64, f64, Option<f64>)> {
    let pred = probs.argmax_rows();
    let acc = accuracy(&pred, labels)?;
    let f1 = macro_f1(&pred, labels, n_classes)?;
    let auc = match auc_ovr(probs, labels) {
        Ok(a) => Some(a),
        Err(Error::Undefined(_)) => None,
        Err(e) => return Err(e),
    };
    Ok((acc, f1, auc))
}

fn stack_rows<T: Real>(parts: Vec<Tensor<T>>, cols: usize) -> Result<Tensor<T>> {
    let data: Vec<T> = parts.into_iter().flat_map(|t| t.into_data()).collect();
    let rows = data.len() / cols;
    Tensor::new(&[rows, cols], data)
}

fn locate(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::Divergence(m) | Error::NonFinite(m) => {
            Error::Divergence(format!("epoch {epoch}, batch {batch}: {m}"))
        }
        other => other,
    }
}

impl<T: Real> EmkKenModel<T> {
    fn collate(&self, samples: &[&Sample]) -> Result<BatchInput<T>> {
        BatchInput::collate(samples, self.f_meta, self.f_embed)
    }

    /// Eval-mode loss, metrics and probabilities over `samples`.
    pub fn evaluate(&self, samples: &[Sample]) -> Result<Evaluation<T>> {
        if samples.is_empty() {
            return Err(Error::Contract("evaluation over zero samples".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut parts = Vec::new();
        let mut loss_sum = 0.0;
        let refs: Vec<&Sample> = samples.iter().collect();
        for chunk in refs.chunks(self.config.batch_size) {
            let batch = self.collate(chunk)?;
            let mut tape = Tape::new();
            let logits = self.forward(&mut tape, &batch, Mode::Eval, &mut rng)?;
            let loss = self.loss(&mut tape, &self.store, logits, &batch.labels)?;
            loss_sum += tape.value(loss).item()?.as_f64() * chunk.len() as f64;
            parts.push(tape.value(logits).softmax());
        }
        let probs = stack_rows(parts, self.config.n_classes)?;
        let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
        let (acc, f1, auc) = metrics(&probs, &labels, self.config.n_classes)?;
        Ok(Evaluation {
            loss: loss_sum / samples.len() as f64,
            acc,
            f1,
            auc,
            probs,
        })
    }

    /// Runs `config.epochs` epochs of shuffled mini-batch Adam. Training
    /// metrics come from the train-mode batch outputs; validation metrics
    /// from an eval pass after each epoch when `validation` is non-empty.
    pub fn train(&mut self, train: &[Sample], validation: &[Sample]) -> Result<History> {
        let mut history = History::default();
        if self.config.epochs == 0 {
            return Ok(history);
        }
        if train.is_empty() {
            return Err(Error::Contract("training split is empty".into()));
        }
        let cfg = self.config.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(TRAIN_STREAM));
        let mut adam = AdamState::new(&self.store, AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut tape = Tape::new();
        for epoch in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut parts = Vec::new();
            let mut labels = Vec::with_capacity(train.len());
            let mut loss_sum = 0.0;
            for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
                let picked: Vec<&Sample> = chunk.iter().map(|&i| &train[i]).collect();
                let batch = self.collate(&picked)?;
                tape.reset();
                let step = (|| {
                    let logits = self.forward(&mut tape, &batch, Mode::Train, &mut rng)?;
                    let loss = self.loss(&mut tape, &self.store, logits, &batch.labels)?;
                    Ok::<_, Error>((logits, loss))
                })();
                let (logits, loss) = step.map_err(|e| locate(e, epoch, bi))?;
                let lv = tape.value(loss).item()?.as_f64();
                if !lv.is_finite() {
                    return Err(Error::Divergence(format!(
                        "non-finite loss {lv} at epoch {epoch}, batch {bi}"
                    )));
                }
                loss_sum += lv * chunk.len() as f64;
                parts.push(tape.value(logits).softmax());
                labels.extend_from_slice(&batch.labels);
                tape.backward_into(loss, &mut self.store)?;
                if self.store.iter().any(|(_, p)| !p.grad.all_finite()) {
                    return Err(Error::Divergence(format!(
                        "non-finite gradient at epoch {epoch}, batch {bi}"
                    )));
                }
                adam.step(&mut self.store);
            }
            let probs = stack_rows(parts, cfg.n_classes)?;
            let (acc, f1, auc) = metrics(&probs, &labels, cfg.n_classes)?;
            history.records.push(EpochRecord {
                epoch,
                split: "train",
                loss: loss_sum / train.len() as f64,
                acc,
                f1,
                auc,
            });
            if !validation.is_empty() {
                let ev = self.evaluate(validation).map_err(|e| locate(e, epoch, 0))?;
                history.records.push(EpochRecord {
                    epoch,
                    split: "validation",
                    loss: ev.loss,
                    acc: ev.acc,
                    f1: ev.f1,
                    auc: ev.auc,
                });
            }
            log::debug!("epoch {epoch}: train loss {:.5}", loss_sum / train.len() as f64);
        }
        Ok(history)
    }
}
