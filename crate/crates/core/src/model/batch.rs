use crate::graph::{CitationCorpus, EgoNetwork};
use crate::numerics::{Real, Tensor};
use crate::{Error, Result};

/// One ego network as a feature sequence whose last position is the center.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub len: usize,
    /// `len × f_meta`, row-major
    pub meta: Vec<f64>,
    /// `len × f_embed`, row-major
    pub embed: Vec<f64>,
    pub label: usize,
}

impl Sample {
    pub fn from_ego(corpus: &CitationCorpus, ego: &EgoNetwork, label: usize) -> Result<Self> {
        if ego.central_index + 1 != ego.len() {
            return Err(Error::Contract(format!(
                "center at position {} of {}; it must come last",
                ego.central_index,
                ego.len()
            )));
        }
        let mut meta = Vec::with_capacity(ego.len() * corpus.f_meta());
        let mut embed = Vec::with_capacity(ego.len() * corpus.f_embed());
        for &id in &ego.ordered_nodes {
            let node = corpus.node(id)?;
            meta.extend_from_slice(&node.meta);
            embed.extend_from_slice(&node.embedding);
        }
        Ok(Sample {
            len: ego.len(),
            meta,
            embed,
            label,
        })
    }
}

/// Samples padded to the longest sequence in the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchInput<T> {
    /// `[N, L, f_meta]`, zero past each sequence end
    pub meta: Tensor<T>,
    /// `[N, L, f_embed]`, zero past each sequence end
    pub embed: Tensor<T>,
    /// `N × L`
    pub valid_mask: Vec<bool>,
    /// `N × L`, one-hot at each sequence's last valid position
    pub central_mask: Vec<bool>,
    pub valid_lens: Vec<usize>,
    pub labels: Vec<usize>,
}

impl<T: Real> BatchInput<T> {
    pub fn collate(samples: &[&Sample], f_meta: usize, f_embed: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let n = samples.len();
        let l = samples.iter().map(|s| s.len).max().unwrap_or(0);
        if l == 0 {
            return Err(Error::Contract("sample with no positions".into()));
        }
        let mut meta = vec![T::zero(); n * l * f_meta];
        let mut embed = vec![T::zero(); n * l * f_embed];
        let mut valid_mask = vec![false; n * l];
        let mut central_mask = vec![false; n * l];
        for (i, s) in samples.iter().enumerate() {
            if s.len == 0 || s.meta.len() != s.len * f_meta || s.embed.len() != s.len * f_embed {
                return Err(Error::Shape(format!(
                    "sample {i}: {} positions with {} metadata and {} embedding values",
                    s.len,
                    s.meta.len(),
                    s.embed.len()
                )));
            }
            for (d, &v) in meta[i * l * f_meta..].iter_mut().zip(&s.meta) {
                *d = T::lit(v);
            }
            for (d, &v) in embed[i * l * f_embed..].iter_mut().zip(&s.embed) {
                *d = T::lit(v);
            }
            valid_mask[i * l..i * l + s.len].fill(true);
            central_mask[i * l + s.len - 1] = true;
        }
        Ok(BatchInput {
            meta: Tensor::new(&[n, l, f_meta], meta)?,
            embed: Tensor::new(&[n, l, f_embed], embed)?,
            valid_mask,
            central_mask,
            valid_lens: samples.iter().map(|s| s.len).collect(),
            labels: samples.iter().map(|s| s.label).collect(),
        })
    }

    /// `(N, L)`
    pub fn dims(&self) -> (usize, usize) {
        (self.meta.shape()[0], self.meta.shape()[1])
    }

    pub(crate) fn check_widths(&self, f_meta: usize, f_embed: usize) -> Result<()> {
        if self.meta.last_dim() != f_meta || self.embed.last_dim() != f_embed {
            return Err(Error::Shape(format!(
                "batch widths ({}, {}) for model widths ({f_meta}, {f_embed})",
                self.meta.last_dim(),
                self.embed.last_dim()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_ego_network, test_support::corpus_with_years};

    #[test]
    fn collate_pads_and_marks_center_last() {
        let a = Sample { len: 1, meta: vec![1.0], embed: vec![2.0], label: 0 };
        let b = Sample { len: 3, meta: vec![1.0, 2.0, 3.0], embed: vec![4.0, 5.0, 6.0], label: 1 };
        let batch = BatchInput::<f64>::collate(&[&a, &b], 1, 1).unwrap();
        assert_eq!(batch.dims(), (2, 3));
        assert_eq!(batch.meta.data(), &[1.0, 0.0, 0.0, 1.0, 2.0, 3.0]);
        assert_eq!(batch.valid_mask, vec![true, false, false, true, true, true]);
        assert_eq!(batch.central_mask, vec![true, false, false, false, false, true]);
        assert_eq!(batch.labels, vec![0, 1]);
        assert!(BatchInput::<f64>::collate(&[], 1, 1).is_err());
        let bad = Sample { len: 2, meta: vec![1.0], embed: vec![1.0, 2.0], label: 0 };
        assert!(BatchInput::<f64>::collate(&[&bad], 1, 1).is_err());
    }

    #[test]
    fn sample_follows_ego_order() {
        let corpus = corpus_with_years(&[Some(2000), Some(1990), None], &[(0, 1), (0, 2)]);
        let ego = build_ego_network(&corpus, crate::NodeId(0)).unwrap();
        let s = Sample::from_ego(&corpus, &ego, 1).unwrap();
        assert_eq!(s.len, 3);
        assert_eq!(s.meta.len(), 3 * corpus.f_meta());
    }
}
