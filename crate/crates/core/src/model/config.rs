//! Hyperparameters, ablation switches and JSON configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::graph::{LabelCriterion, SplitRatios};
use crate::layers::ScanMode;
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const D_STATE1_RANGE: (usize, usize) = (1, 16);
pub const D_STATE2_RANGE: (usize, usize) = (8, 120);

/// Structural removals. Each flag only ever removes parameters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablation {
    /// Metadata features are repeated to the expanded width instead of
    /// passing through the learned expansion.
    pub no_metafp: bool,
    /// Convolution replaced by the identity, activation kept.
    pub no_conv: bool,
    /// Scan replaced by the identity, gate kept.
    pub no_ssm: bool,
    /// Whole sequence block replaced by a per-position linear map.
    pub no_mamba: bool,
    /// Spline units replaced by linear maps.
    pub no_kan: bool,
    /// Spline-unit dropout forced to 0.
    pub no_kan_dropout: bool,
}

impl Ablation {
    pub const FLAGS: [&'static str; 6] = [
        "no_metafp",
        "no_conv",
        "no_ssm",
        "no_mamba",
        "no_kan",
        "no_kan_dropout",
    ];

    /// Single-flag variant by name.
    pub fn only(flag: &str) -> Result<Self> {
        let mut a = Ablation::default();
        match flag {
            "no_metafp" => a.no_metafp = true,
            "no_conv" => a.no_conv = true,
            "no_ssm" => a.no_ssm = true,
            "no_mamba" => a.no_mamba = true,
            "no_kan" => a.no_kan = true,
            "no_kan_dropout" => a.no_kan_dropout = true,
            other => return Err(Error::config("ablation", format!("unknown flag {other:?}"))),
        }
        Ok(a)
    }

    /// The full model followed by the six single removals.
    pub fn table() -> Vec<(&'static str, Ablation)> {
        std::iter::once(("full", Ablation::default()))
            .chain(Self::FLAGS.iter().map(|&f| (f, Ablation::only(f).unwrap())))
            .collect()
    }

    pub fn is_full(&self) -> bool {
        *self == Ablation::default()
    }

    /// Rejects flags that remove parts of something already removed.
    pub fn validate(&self) -> Result<()> {
        let conflicts = [
            (self.no_mamba && self.no_conv, "no_mamba with no_conv"),
            (self.no_mamba && self.no_ssm, "no_mamba with no_ssm"),
            (self.no_kan && self.no_kan_dropout, "no_kan with no_kan_dropout"),
        ];
        match conflicts.iter().find(|c| c.0) {
            Some((_, what)) => Err(Error::config("ablation", format!("conflicting flags: {what}"))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmkKenConfig {
    pub schema_version: u32,
    /// Metadata width; taken from the corpus when absent.
    pub f_meta: Option<usize>,
    /// Embedding width; taken from the corpus when absent.
    pub f_embed: Option<usize>,
    pub h_dim: usize,
    pub d_state1: usize,
    pub d_state2: usize,
    pub knu_hdim: usize,
    /// Defaults to `knu_hdim / 2`.
    pub knu_output_dim: Option<usize>,
    pub n_classes: usize,
    pub lambda: f64,
    pub dropout_mamba: f64,
    pub dropout_kan: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub scan_mode: ScanMode,
    pub ablation: Ablation,
    pub label: LabelCriterion,
    pub split: SplitRatios,
    pub n_trials: usize,
    /// Papers with fewer references are not used as samples.
    pub min_references: usize,
}

impl Default for EmkKenConfig {
    fn default() -> Self {
        EmkKenConfig {
            schema_version: SCHEMA_VERSION,
            f_meta: None,
            f_embed: None,
            h_dim: 32,
            d_state1: 4,
            d_state2: 16,
            knu_hdim: 32,
            knu_output_dim: None,
            n_classes: 2,
            lambda: 1e-4,
            dropout_mamba: 0.1,
            dropout_kan: 0.1,
            lr: 1e-3,
            epochs: 100,
            batch_size: 32,
            seed: 0,
            scan_mode: ScanMode::PaperLiteral,
            ablation: Ablation::default(),
            label: LabelCriterion::Complexity,
            split: SplitRatios::default(),
            n_trials: 10,
            min_references: 1,
        }
    }
}

impl EmkKenConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Applies `key=value` overrides (dotted keys reach nested fields;
    /// values parse as JSON, falling back to a plain string).
    pub fn with_overrides(&self, sets: &[String]) -> Result<Self> {
        let mut doc = serde_json::to_value(self)?;
        for s in sets {
            let (key, raw) = s
                .split_once('=')
                .ok_or_else(|| Error::config(s.clone(), "override must be KEY=VALUE"))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut doc, key, value)?;
        }
        let cfg: Self =
            serde_json::from_value(doc).map_err(|e| Error::config("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn knu_out(&self) -> usize {
        self.knu_output_dim.unwrap_or(self.knu_hdim / 2)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, msg: String| Err(Error::config(field, msg));
        if self.schema_version != SCHEMA_VERSION {
            return fail(
                "schema_version",
                format!("unsupported {} (expected {SCHEMA_VERSION})", self.schema_version),
            );
        }
        let in_range = |v: usize, (lo, hi): (usize, usize)| (lo..=hi).contains(&v);
        if !in_range(self.d_state1, D_STATE1_RANGE) {
            return fail("d_state1", format!("{} outside [1, 16]", self.d_state1));
        }
        if !in_range(self.d_state2, D_STATE2_RANGE) {
            return fail("d_state2", format!("{} outside [8, 120]", self.d_state2));
        }
        if self.n_classes < 2 {
            return fail("n_classes", "need at least 2 classes".into());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail("lambda", format!("{} must be finite and non-negative", self.lambda));
        }
        for (name, rate) in [("dropout_mamba", self.dropout_mamba), ("dropout_kan", self.dropout_kan)] {
            if !(0.0..1.0).contains(&rate) {
                return fail(name, format!("{rate} not in [0, 1)"));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("lr", format!("{} must be positive", self.lr));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("h_dim", self.h_dim),
            ("n_trials", self.n_trials),
            ("knu_output_dim", self.knu_out()),
        ] {
            if v == 0 {
                return fail(name, "must be positive".into());
            }
        }
        for (name, v) in [("f_meta", self.f_meta), ("f_embed", self.f_embed)] {
            if v == Some(0) {
                return fail(name, "must be positive".into());
            }
        }
        if let Some(f) = self.f_meta {
            if self.h_dim < f {
                return fail("h_dim", format!("{} smaller than f_meta {f}", self.h_dim));
            }
        }
        self.split.validate()?;
        self.ablation.validate()
    }

    /// Fills feature widths from data, rejecting disagreement.
    pub fn resolve_widths(&self, f_meta: usize, f_embed: usize) -> Result<Self> {
        let mut cfg = self.clone();
        for (name, slot, actual) in [
            ("f_meta", &mut cfg.f_meta, f_meta),
            ("f_embed", &mut cfg.f_embed, f_embed),
        ] {
            match *slot {
                Some(v) if v != actual => {
                    return Err(Error::config(name, format!("config says {v}, data has {actual}")));
                }
                _ => *slot = Some(actual),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn set_path(doc: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::config(key, format!("{part:?} is not inside an object")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        let next = obj.entry(part.to_string()).or_insert(Value::Null);
        if next.is_null() {
            *next = Value::Object(Default::default());
        }
        cur = next;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = EmkKenConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.knu_out(), 16);
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(EmkKenConfig::from_json(&text).unwrap(), cfg);
        assert_eq!(EmkKenConfig::from_json("{}").unwrap(), cfg);
    }

    #[test]
    fn field_errors_name_the_field() {
        let err = EmkKenConfig::from_json(r#"{"d_state2": 0}"#).unwrap_err();
        assert!(matches!(&err, Error::Config { field, .. } if field == "d_state2"), "{err}");
        let err = EmkKenConfig::from_json(r#"{"schema_version": 7}"#).unwrap_err();
        assert!(err.to_string().contains("schema_version"));
        assert!(EmkKenConfig::from_json(r#"{"bogus": 1}"#).is_err());
        assert!(EmkKenConfig::from_json(r#"{"d_state1": 17}"#).is_err());
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let cfg = EmkKenConfig::default()
            .with_overrides(&[
                "epochs=3".into(),
                "ablation.no_kan=true".into(),
                "scan_mode=zoh".into(),
                "label.criterion=kqi".into(),
            ])
            .unwrap();
        assert_eq!(cfg.epochs, 3);
        assert!(cfg.ablation.no_kan);
        assert_eq!(cfg.scan_mode, ScanMode::Zoh);
        assert_eq!(cfg.label, LabelCriterion::Kqi);
        assert!(EmkKenConfig::default().with_overrides(&["epochs".into()]).is_err());
        assert!(EmkKenConfig::default().with_overrides(&["d_state2=3".into()]).is_err());
    }

    #[test]
    fn ablation_table_and_conflicts() {
        let t = Ablation::table();
        assert_eq!(t.len(), 7);
        assert!(t[0].1.is_full());
        assert!(t[1..].iter().all(|(_, a)| !a.is_full() && a.validate().is_ok()));
        let bad = Ablation { no_mamba: true, no_ssm: true, ..Ablation::default() };
        assert!(bad.validate().is_err());
        assert!(Ablation::only("no_everything").is_err());
    }

    #[test]
    fn widths_resolve_from_data() {
        let cfg = EmkKenConfig::default().resolve_widths(4, 8).unwrap();
        assert_eq!((cfg.f_meta, cfg.f_embed), (Some(4), Some(8)));
        assert!(cfg.resolve_widths(5, 8).is_err());
    }
}
