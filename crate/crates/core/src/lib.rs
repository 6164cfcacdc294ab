//! Knowledge evaluation over citation networks.
//!
//! The crate has two halves. [`graph`] and [`kqi`] ingest a citation corpus,
//! cut it into ego networks and score papers with the structural-entropy
//! Knowledge Quantification Index. [`numerics`], [`layers`], [`model`] and
//! [`eval`] implement the dual-branch selective-scan + KAN classifier, its
//! training loop and the repeated-trial metrics harness.

pub mod error;
pub mod eval;
pub mod graph;
pub mod kqi;
pub mod layers;
pub mod model;
pub mod numerics;
mod quantile;
pub mod synth;

pub use error::{Error, Result};
pub use graph::{CitationCorpus, DatasetSplit, EgoNetwork, GraphStats, LabelCriterion, NodeId};
pub use kqi::{KnowledgeTree, KqiScore, VolumeTable};
pub use model::{Ablation, EmkKenConfig, EmkKenModel, ScanMode};
pub use numerics::{Mode, ParamStore, Parameter, Real, Tape, Tensor, Var};
