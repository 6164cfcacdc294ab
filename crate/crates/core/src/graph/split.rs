use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            validation: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let r = [self.train, self.validation, self.test];
        if !r.iter().all(|&x| x > 0.0) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::config(
                "split",
                format!("ratios must be positive and sum to 1, got {r:?}"),
            ));
        }
        Ok(())
    }

    /// Split sizes: train and validation rounded, test takes the rest.
    fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let train = ((self.train * n as f64).round() as usize).min(n);
        let val = ((self.validation * n as f64).round() as usize).min(n - train);
        (train, val, n - train - val)
    }
}

/// Disjoint index lists covering a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
    pub stratified: bool,
}

/// Shuffled split ignoring labels.
pub fn split_unstratified(n: usize, ratios: SplitRatios, seed: u64) -> Result<DatasetSplit> {
    ratios.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    Ok(cut(order, ratios, seed, false))
}

/// Label-stratified split. Falls back to [`split_unstratified`] with a
/// warning when some class has fewer than three samples.
pub fn split_dataset(labels: &[usize], ratios: SplitRatios, seed: u64) -> Result<DatasetSplit> {
    ratios.validate()?;
    let mut classes: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        classes.entry(y).or_default().push(i);
    }
    if let Some((c, members)) = classes.iter().find(|(_, m)| m.len() < 3) {
        log::warn!(
            "class {c} has {} samples, fewer than the 3 splits; using an unstratified split",
            members.len()
        );
        return split_unstratified(labels.len(), ratios, seed);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Each sample gets its fractional rank within its shuffled class; cutting
    // the merged order at the global sizes keeps every class proportional.
    let mut keyed: Vec<(f64, usize, usize)> = Vec::with_capacity(labels.len());
    for (&c, members) in classes.iter_mut() {
        members.shuffle(&mut rng);
        let m = members.len() as f64;
        for (rank, &i) in members.iter().enumerate() {
            keyed.push(((rank as f64 + 0.5) / m, c, i));
        }
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let order = keyed.into_iter().map(|(_, _, i)| i).collect();
    Ok(cut(order, ratios, seed, true))
}

fn cut(order: Vec<usize>, ratios: SplitRatios, seed: u64, stratified: bool) -> DatasetSplit {
    let (n_train, n_val, _) = ratios.sizes(order.len());
    let mut train = order[..n_train].to_vec();
    let mut validation = order[n_train..n_train + n_val].to_vec();
    let mut test = order[n_train + n_val..].to_vec();
    train.sort_unstable();
    validation.sort_unstable();
    test.sort_unstable();
    DatasetSplit {
        train,
        validation,
        test,
        seed,
        stratified,
    }
}
