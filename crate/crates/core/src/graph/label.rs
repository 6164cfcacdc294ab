use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::quantile::{bin, quantile_thresholds};
use crate::{Error, Result};

use super::{CitationCorpus, EgoNetwork};

/// How samples receive their class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "criterion", rename_all = "lowercase")]
pub enum LabelCriterion {
    /// Composite of center in-degree, node count and edge count, binned by
    /// quantiles fitted on the training split.
    Complexity,
    /// Labels read from an `id,label` CSV.
    Provided {
        #[serde(default)]
        path: Option<PathBuf>,
    },
    /// Log-KQI of the center, binned by quantiles.
    Kqi,
}

/// Raw inputs of the complexity score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexityFeatures {
    pub center_in_degree: f64,
    pub nodes: f64,
    pub edges: f64,
}

impl ComplexityFeatures {
    pub fn of(ego: &EgoNetwork, corpus: &CitationCorpus) -> Self {
        ComplexityFeatures {
            center_in_degree: corpus.in_degree(ego.center) as f64,
            nodes: ego.len() as f64,
            edges: ego.edges.len() as f64,
        }
    }

    fn as_array(&self) -> [f64; 3] {
        [self.center_in_degree, self.nodes, self.edges]
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Fitted {
    mean: [f64; 3],
    std: [f64; 3],
    thresholds: Vec<f64>,
}

/// `s = z(in_degree) + z(L) + z(E)` binned into equal-frequency classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexityLabeler {
    n_classes: usize,
    fitted: Option<Fitted>,
}

impl ComplexityLabeler {
    pub fn new(n_classes: usize) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::config("n_classes", "need at least 2 classes"));
        }
        Ok(ComplexityLabeler {
            n_classes,
            fitted: None,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn is_fitted(&self) -> bool {
        self.fitted.is_some()
    }

    /// Fits z-score moments and class thresholds on training samples.
    pub fn fit(&mut self, train: &[ComplexityFeatures]) -> Result<()> {
        if train.is_empty() {
            return Err(Error::Contract("cannot fit labeler on no samples".into()));
        }
        let n = train.len() as f64;
        let mut mean = [0.0; 3];
        let mut std = [0.0; 3];
        for f in train {
            for (m, v) in mean.iter_mut().zip(f.as_array()) {
                *m += v / n;
            }
        }
        for f in train {
            for ((s, v), m) in std.iter_mut().zip(f.as_array()).zip(mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let std = std.map(f64::sqrt);
        let mut fitted = Fitted {
            mean,
            std,
            thresholds: Vec::new(),
        };
        let scores: Vec<f64> = train.iter().map(|f| fitted.score(f)).collect();
        fitted.thresholds = quantile_thresholds(&scores, self.n_classes);
        self.fitted = Some(fitted);
        Ok(())
    }

    pub fn score(&self, f: &ComplexityFeatures) -> Result<f64> {
        Ok(self.state()?.score(f))
    }

    pub fn label(&self, f: &ComplexityFeatures) -> Result<usize> {
        let fitted = self.state()?;
        Ok(bin(fitted.score(f), &fitted.thresholds))
    }

    fn state(&self) -> Result<&Fitted> {
        self.fitted
            .as_ref()
            .ok_or_else(|| Error::State("complexity thresholds not fitted".into()))
    }
}

impl Fitted {
    fn score(&self, f: &ComplexityFeatures) -> f64 {
        f.as_array()
            .iter()
            .zip(self.mean)
            .zip(self.std)
            .map(|((&v, m), s)| if s > 0.0 { (v - m) / s } else { 0.0 })
            .sum()
    }
}

pub fn label_by_complexity(
    ego: &EgoNetwork,
    corpus: &CitationCorpus,
    labeler: &ComplexityLabeler,
) -> Result<usize> {
    labeler.label(&ComplexityFeatures::of(ego, corpus))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::graph::test_support::corpus;
    use crate::graph::{build_ego_network, NodeId};

    fn feat(d: f64, l: f64, e: f64) -> ComplexityFeatures {
        ComplexityFeatures {
            center_in_degree: d,
            nodes: l,
            edges: e,
        }
    }

    #[test]
    fn unfitted_is_state_error() {
        let l = ComplexityLabeler::new(2).unwrap();
        assert!(matches!(l.label(&feat(1., 1., 1.)), Err(Error::State(_))));
        assert!(ComplexityLabeler::new(1).is_err());
    }

    #[test]
    fn identical_egos_all_class_zero() {
        let mut l = ComplexityLabeler::new(3).unwrap();
        let xs = vec![feat(2., 3., 4.); 10];
        l.fit(&xs).unwrap();
        assert!(xs.iter().all(|f| l.label(f).unwrap() == 0));
    }

    #[test]
    fn boundary_score_goes_to_lower_class() {
        let mut l = ComplexityLabeler::new(2).unwrap();
        let xs: Vec<_> = (0..4).map(|i| feat(i as f64, 1., 1.)).collect();
        l.fit(&xs).unwrap();
        // in-degrees 0..3: threshold is the score of in-degree 1
        assert_eq!(l.label(&xs[1]).unwrap(), 0);
        assert_eq!(l.label(&xs[2]).unwrap(), 1);
    }

    #[test]
    fn thousand_egos_three_classes_balanced() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs: Vec<_> = (0..1000)
            .map(|_| {
                feat(
                    rng.random_range(0.0..50.0),
                    rng.random_range(1.0..30.0),
                    rng.random_range(0.0..90.0),
                )
            })
            .collect();
        let mut l = ComplexityLabeler::new(3).unwrap();
        l.fit(&xs).unwrap();
        let mut counts = [0usize; 3];
        for f in &xs {
            counts[l.label(f).unwrap()] += 1;
        }
        for c in counts {
            assert!((c as f64 - 1000.0 / 3.0).abs() <= 1.0, "{counts:?}");
        }
    }

    #[test]
    fn monotone_in_center_in_degree() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let xs: Vec<_> = (0..200)
            .map(|_| feat(rng.random_range(0.0..20.0), rng.random_range(1.0..10.0), 3.0))
            .collect();
        let mut l = ComplexityLabeler::new(4).unwrap();
        l.fit(&xs).unwrap();
        for f in &xs {
            let mut prev = 0;
            for d in 0..40 {
                let c = l.label(&feat(d as f64, f.nodes, f.edges)).unwrap();
                assert!(c >= prev);
                prev = c;
            }
        }
    }

    #[test]
    fn features_from_ego() {
        let c = corpus(4, &[(0, 1), (0, 2), (1, 2), (3, 0)]);
        let ego = build_ego_network(&c, NodeId(0)).unwrap();
        let f = ComplexityFeatures::of(&ego, &c);
        assert_eq!(f.as_array(), [1.0, 3.0, 3.0]);
    }
}
