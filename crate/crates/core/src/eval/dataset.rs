//! Ego-network samples with their labelling plan.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::graph::{
    build_ego_networks, split_dataset, split_unstratified, CitationCorpus, ComplexityFeatures,
    ComplexityLabeler, DatasetSplit, EgoNetwork, LabelCriterion, NodeId, SplitRatios,
};
use crate::kqi::{kqi_all, log_bin, to_dag};
use crate::model::{EmkKenConfig, Sample};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Labels {
    /// Known up front; splits are stratified.
    Fixed(Vec<usize>),
    /// Quantile thresholds are fitted on each trial's training split.
    Complexity(Vec<ComplexityFeatures>),
}

/// Samples for one corpus and labelling criterion.
#[derive(Debug, Clone, PartialEq)]
pub struct EgoDataset {
    centers: Vec<NodeId>,
    samples: Vec<Sample>,
    labels: Labels,
    n_classes: usize,
    f_meta: usize,
    f_embed: usize,
}

/// Samples of one split, labels filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedData {
    pub split: DatasetSplit,
    pub labels: Vec<usize>,
    pub train: Vec<Sample>,
    pub validation: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Papers used as samples: the ids in `provided` when given, otherwise
/// every paper with at least `min_references` references.
pub fn select_centers(
    corpus: &CitationCorpus,
    min_references: usize,
    provided: Option<&BTreeMap<u64, usize>>,
) -> Result<Vec<NodeId>> {
    match provided {
        Some(map) => map
            .keys()
            .map(|&orig| {
                corpus
                    .lookup(orig)
                    .ok_or_else(|| Error::Lookup(format!("labelled paper {orig} not in corpus")))
            })
            .collect(),
        None => Ok((0..corpus.node_count())
            .map(NodeId)
            .filter(|&id| corpus.references(id).len() >= min_references)
            .collect()),
    }
}

impl EgoDataset {
    /// Builds centers, ego networks and labels as `cfg.label` prescribes.
    /// `provided` is required for [`LabelCriterion::Provided`].
    pub fn build(
        corpus: &CitationCorpus,
        cfg: &EmkKenConfig,
        provided: Option<&BTreeMap<u64, usize>>,
    ) -> Result<Self> {
        let provided = match (&cfg.label, provided) {
            (LabelCriterion::Provided { .. }, Some(p)) => Some(p),
            (LabelCriterion::Provided { .. }, None) => {
                return Err(Error::config("label", "provided labels requested but no label file given"))
            }
            _ => None,
        };
        let centers = select_centers(corpus, cfg.min_references, provided)?;
        if centers.len() < 3 {
            return Err(Error::Contract(format!(
                "{} usable papers; need at least 3 to split",
                centers.len()
            )));
        }
        let egos = build_ego_networks(corpus, &centers)?;
        let labels = match &cfg.label {
            LabelCriterion::Provided { .. } => {
                let map = provided.expect("checked above");
                let labels: Vec<usize> = map.values().copied().collect();
                if let Some(&bad) = labels.iter().find(|&&l| l >= cfg.n_classes) {
                    return Err(Error::config(
                        "n_classes",
                        format!("label {bad} needs more than {} classes", cfg.n_classes),
                    ));
                }
                Labels::Fixed(labels)
            }
            LabelCriterion::Kqi => Labels::Fixed(kqi_labels(corpus, &centers, cfg.n_classes)?),
            LabelCriterion::Complexity => Labels::Complexity(
                egos.iter().map(|e| ComplexityFeatures::of(e, corpus)).collect(),
            ),
        };
        Self::assemble(corpus, centers, &egos, labels, cfg.n_classes)
    }

    /// Dataset with labels already known, one per center.
    pub fn with_labels(
        corpus: &CitationCorpus,
        centers: Vec<NodeId>,
        labels: Vec<usize>,
        n_classes: usize,
    ) -> Result<Self> {
        if labels.len() != centers.len() {
            return Err(Error::Shape(format!(
                "{} labels for {} centers",
                labels.len(),
                centers.len()
            )));
        }
        let egos = build_ego_networks(corpus, &centers)?;
        Self::assemble(corpus, centers, &egos, Labels::Fixed(labels), n_classes)
    }

    fn assemble(
        corpus: &CitationCorpus,
        centers: Vec<NodeId>,
        egos: &[EgoNetwork],
        labels: Labels,
        n_classes: usize,
    ) -> Result<Self> {
        let samples = egos
            .par_iter()
            .map(|e| Sample::from_ego(corpus, e, 0))
            .collect::<Result<Vec<_>>>()?;
        Ok(EgoDataset {
            centers,
            samples,
            labels,
            n_classes,
            f_meta: corpus.f_meta(),
            f_embed: corpus.f_embed(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn centers(&self) -> &[NodeId] {
        &self.centers
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn widths(&self) -> (usize, usize) {
        (self.f_meta, self.f_embed)
    }

    /// Split and labels for one seed.
    pub fn prepare(&self, ratios: SplitRatios, seed: u64) -> Result<PreparedData> {
        let (split, labels) = match &self.labels {
            Labels::Fixed(labels) => (split_dataset(labels, ratios, seed)?, labels.clone()),
            Labels::Complexity(features) => {
                let split = split_unstratified(self.len(), ratios, seed)?;
                let mut labeler = ComplexityLabeler::new(self.n_classes)?;
                let train: Vec<ComplexityFeatures> = split.train.iter().map(|&i| features[i]).collect();
                labeler.fit(&train)?;
                let labels = features.iter().map(|f| labeler.label(f)).collect::<Result<Vec<_>>>()?;
                (split, labels)
            }
        };
        let pick = |idx: &[usize]| -> Vec<Sample> {
            idx.iter()
                .map(|&i| Sample { label: labels[i], ..self.samples[i].clone() })
                .collect()
        };
        Ok(PreparedData {
            train: pick(&split.train),
            validation: pick(&split.validation),
            test: pick(&split.test),
            labels,
            split,
        })
    }
}

/// Log-binned KQI of each center, scored on the whole corpus.
pub fn kqi_labels(corpus: &CitationCorpus, centers: &[NodeId], n_classes: usize) -> Result<Vec<usize>> {
    let scores = kqi_all(&to_dag(corpus))?;
    let center_scores: Vec<f64> = centers.iter().map(|&c| scores.of(c)).collect();
    let bins = log_bin(&center_scores, n_classes)?;
    if bins.degenerate {
        return Err(Error::Degenerate(
            "every center has KQI 0; labels would all be class 0".into(),
        ));
    }
    Ok(bins.labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthConfig};

    fn synth() -> crate::synth::SynthCorpus {
        generate(&SynthConfig { n_samples: 60, pool: 40, ..SynthConfig::default() }).unwrap()
    }

    #[test]
    fn provided_labels_select_centers_and_stratify() {
        let s = synth();
        let map: BTreeMap<u64, usize> = s
            .samples
            .iter()
            .zip(&s.labels)
            .map(|(&id, &l)| (s.corpus.original_id(id), l))
            .collect();
        let cfg = EmkKenConfig { label: LabelCriterion::Provided { path: None }, ..EmkKenConfig::default() };
        let d = EgoDataset::build(&s.corpus, &cfg, Some(&map)).unwrap();
        assert_eq!(d.centers(), &s.samples[..]);
        let p = d.prepare(SplitRatios::default(), 3).unwrap();
        assert_eq!((p.train.len(), p.validation.len(), p.test.len()), (48, 6, 6));
        assert!(p.split.stratified);
        assert_eq!(p.labels, s.labels);
        assert_eq!(p, d.prepare(SplitRatios::default(), 3).unwrap());
        assert!(EgoDataset::build(&s.corpus, &cfg, None).is_err());

        let cfg3 = EmkKenConfig { n_classes: 2, ..cfg };
        let mut bad = map.clone();
        *bad.values_mut().next().unwrap() = 5;
        assert!(EgoDataset::build(&s.corpus, &cfg3, Some(&bad)).is_err());
    }

    #[test]
    fn complexity_labels_depend_on_train_split_only() {
        let s = synth();
        let d = EgoDataset::build(&s.corpus, &EmkKenConfig::default(), None).unwrap();
        // every sample paper and every citing paper has references
        assert!(d.len() > 60);
        let p = d.prepare(SplitRatios::default(), 1).unwrap();
        assert!(!p.split.stratified);
        assert!(p.labels.iter().all(|&l| l < 2));
    }

    #[test]
    fn kqi_labels_and_degenerate_case() {
        let s = synth();
        let cfg = EmkKenConfig { label: LabelCriterion::Kqi, ..EmkKenConfig::default() };
        let d = EgoDataset::build(&s.corpus, &cfg, None).unwrap();
        let p = d.prepare(SplitRatios::default(), 0).unwrap();
        let ones = p.labels.iter().filter(|&&l| l == 1).count();
        assert!(ones > 0 && ones < p.labels.len());

        // a star: every citing paper is a leaf, so all their KQI are 0
        let corpus = crate::graph::test_support::corpus(5, &[(1, 0), (2, 0), (3, 0), (4, 0)]);
        let err = EgoDataset::build(&corpus, &cfg, None).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)), "{err}");
    }
}
