//! Run configuration: one flat TOML file, every key optional.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detect::ThresholdMethod;
use crate::error::{Error, Result};
use crate::merge::{MergePolicy, MergeTiming};
use crate::meta::{ExpansionPolicy, MetaTrainConfig, TransferSource};
use crate::model::{TrainConfig, DEFAULT_HIDDEN, DEFAULT_SEGMENT_LENGTH, DEFAULT_STRIDE};
use crate::pool::ModelShape;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,

    pub segment_length: usize,
    pub stride: usize,
    pub hidden: Vec<usize>,

    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub beta: f64,
    pub mu: f64,

    pub eps_model: f64,
    pub eps_judge_factor: f64,
    pub transfer: TransferSource,
    pub meta_folds: usize,

    pub eps_merge: usize,
    pub eps_disscore: f64,
    pub merge_timing: MergeTiming,

    pub k: usize,
    /// Largest buffer of the range metrics.
    pub vus_max_buffer: usize,
    pub threshold: ThresholdMethod,
}

impl Default for Config {
    fn default() -> Self {
        let train = TrainConfig::default();
        let expansion = ExpansionPolicy::default();
        let merge = MergePolicy::default();
        Self {
            seed: 0,
            segment_length: DEFAULT_SEGMENT_LENGTH,
            stride: DEFAULT_STRIDE,
            hidden: DEFAULT_HIDDEN.to_vec(),
            epochs: train.epochs,
            learning_rate: train.learning_rate,
            batch_size: train.batch_size,
            beta: train.beta,
            mu: train.mu,
            eps_model: expansion.eps_model,
            eps_judge_factor: expansion.eps_judge_factor,
            transfer: TransferSource::Last,
            meta_folds: 5,
            eps_merge: merge.eps_merge,
            eps_disscore: merge.eps_disscore,
            merge_timing: merge.timing,
            k: 3,
            vus_max_buffer: 16,
            threshold: ThresholdMethod::default(),
        }
    }
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_table(text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?)
    }

    /// Parse `text`, apply `key=value` overrides (values in TOML syntax,
    /// bare words taken as strings, dotted keys reach into tables), validate.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Self::from_table(table)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_with_overrides(&text, overrides)
    }

    fn from_table(table: toml::Table) -> Result<Self> {
        let cfg: Config = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seed > i64::MAX as u64 {
            return Err(Error::Config("seed must fit in a signed 64-bit integer".into()));
        }
        if self.segment_length < 2 {
            return Err(Error::Config("segment_length must be at least 2".into()));
        }
        if self.stride == 0 || self.stride > self.segment_length {
            return Err(Error::Config("stride must lie in [1, segment_length]".into()));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config("hidden sizes must be non-empty and positive".into()));
        }
        self.train_config().validate()?;
        self.expansion_policy().validate()?;
        self.merge_policy().validate()?;
        self.threshold.validate()?;
        if self.meta_folds < 2 {
            return Err(Error::Config("meta_folds must be at least 2".into()));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        Ok(())
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape {
            segment_length: self.segment_length,
            stride: self.stride,
            hidden: self.hidden.clone(),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            mu: self.mu,
            beta: self.beta,
            seed: self.seed,
        }
    }

    pub fn expansion_policy(&self) -> ExpansionPolicy {
        ExpansionPolicy {
            eps_model: self.eps_model,
            eps_judge_factor: self.eps_judge_factor,
        }
    }

    pub fn merge_policy(&self) -> MergePolicy {
        MergePolicy {
            eps_merge: self.eps_merge,
            eps_disscore: self.eps_disscore,
            timing: self.merge_timing,
        }
    }

    pub fn meta_config(&self) -> MetaTrainConfig {
        MetaTrainConfig {
            seed: self.seed,
            ..MetaTrainConfig::default()
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{spec}' is not key=value")))?;
    let (key, raw) = (key.trim(), raw.trim());
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|k| !k.is_empty()).ok_or_else(|| Error::Config(format!("empty key in '{spec}'")))?;
    let mut cur = table;
    for p in parts {
        cur = cur
            .entry(p)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("'{p}' is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = Config::from_toml_str("").unwrap();
        assert_eq!(c, Config::default());
        assert_eq!(c.segment_length, 32);
        assert_eq!(c.hidden, vec![16, 8, 16]);
        assert_eq!((c.beta, c.mu), (0.3, 2.0));
        assert_eq!((c.eps_model, c.eps_judge_factor), (0.8, 0.34));
        assert_eq!((c.eps_merge, c.eps_disscore), (15, 0.01));
        assert_eq!(c.k, 3);
        assert_eq!(c.vus_max_buffer, 16);
        assert_eq!(c.merge_timing, MergeTiming::AfterTest);
        assert_eq!(c.transfer, TransferSource::Last);
        assert_eq!(c.threshold, ThresholdMethod::MeanStd { multiplier: 2.5 });
    }

    #[test]
    fn unknown_key_rejected() {
        let e = Config::from_toml_str("epochz = 3").unwrap_err();
        assert!(matches!(e, Error::Config(_)), "{e}");
    }

    #[test]
    fn invalid_values_rejected() {
        for text in ["beta = 1.0", "k = 0", "eps_merge = 1", "stride = 64", "hidden = []", "meta_folds = 1"] {
            assert!(Config::from_toml_str(text).is_err(), "{text}");
        }
    }

    #[test]
    fn overrides_win() {
        let c = Config::from_toml_with_overrides(
            "seed = 1\nk = 2\n",
            &[
                "seed=9".into(),
                "transfer=average".into(),
                "threshold.method=percentile".into(),
                "threshold.anomaly_ratio=0.1".into(),
            ],
        );
        let c = c.unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.k, 2);
        assert_eq!(c.transfer, TransferSource::Average);
        assert_eq!(c.threshold, ThresholdMethod::Percentile { anomaly_ratio: 0.1 });
    }

    #[test]
    fn toml_round_trip_and_hash() {
        let mut c = Config::default();
        c.threshold = ThresholdMethod::Epsilon;
        c.seed = 17;
        let back = Config::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_ne!(Config::default().hash(), c.hash());
        assert_eq!(c.hash().len(), 64);
    }
}
