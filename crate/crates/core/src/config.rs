//! Run configuration. Every default is the final value of the tuned
//! system; the sweep envelopes are the explored ranges.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::error::{read_to_string, Error, Result};
use crate::model::{CnnConfig, EmbeddingConfig, RnnConfig};
use crate::training::hash_json;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Master seed; every random stream is derived from it by name.
    pub seed: u64,
    /// Ensemble members trained concurrently.
    pub workers: usize,
    pub features: FeaturesConfig,
    pub embedding: EmbeddingConfig,
    pub cnn: CnnConfig,
    pub rnn: RnnConfig,
    pub training: TrainingConfig,
    pub augment: AugmentConfig,
    pub sweep: SweepConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 42,
            workers: 1,
            features: FeaturesConfig::default(),
            embedding: EmbeddingConfig::default(),
            cnn: CnnConfig::default(),
            rnn: RnnConfig::default(),
            training: TrainingConfig::default(),
            augment: AugmentConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesConfig {
    /// Largest inter-entity distance of a Subtask 2 candidate pair.
    pub max_distance: usize,
    pub relpos_clip: usize,
    pub min_count: usize,
    /// Tag tokens with the bundled heuristic tagger when no POS file is given.
    pub fallback_pos: bool,
    /// Optional pretrained vectors in word2vec text format.
    pub word_vectors: Option<PathBuf>,
}

impl Default for FeaturesConfig {
    fn default() -> Self {
        FeaturesConfig {
            max_distance: 19,
            relpos_clip: 30,
            min_count: 1,
            fallback_pos: true,
            word_vectors: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseConfig {
    pub epochs: usize,
    /// Halve the learning rate after this many epochs.
    pub halve_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub ensemble_size: usize,
    pub subtask1: PhaseConfig,
    pub subtask2: PhaseConfig,
    /// Positive-to-negative ratio for Subtask 2; 0 disables upsampling.
    pub upsample_ratio: f64,
    pub folds: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            learning_rate: 0.01,
            batch_size: 64,
            ensemble_size: 20,
            subtask1: PhaseConfig {
                epochs: 200,
                halve_every: 25,
            },
            subtask2: PhaseConfig {
                epochs: 10,
                halve_every: 1,
            },
            upsample_ratio: 1.0,
            folds: 5,
        }
    }
}

impl Default for PhaseConfig {
    fn default() -> Self {
        TrainingConfig::default().subtask1
    }
}

/// Closed `[low, high]` envelope of one sweepable parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub param: String,
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Grid points per parameter, endpoints included.
    pub points: usize,
    pub ranges: Vec<Range>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let r = |param: &str, low: f64, high: f64| Range {
            param: param.into(),
            low,
            high,
        };
        SweepConfig {
            points: 5,
            ranges: vec![
                r("embedding.word_dim", 100.0, 300.0),
                r("embedding.pos_dim", 10.0, 50.0),
                r("embedding.relpos_dim", 10.0, 50.0),
                r("cnn.filters_per_width", 64.0, 384.0),
                // smallest width of the bank; the bank moves from 2..=4 to 5..=9
                r("cnn.min_width", 2.0, 5.0),
                r("l2_lambda", 0.0, 1.0),
                // zero units is not a network; the grid starts at one
                r("rnn.lstm_units", 1.0, 2400.0),
                r("dropout", 0.0, 0.7),
                r("training.learning_rate", 0.001, 0.1),
                r("training.subtask1.epochs", 20.0, 400.0),
                r("training.subtask2.epochs", 5.0, 40.0),
                r("training.ensemble_size", 1.0, 30.0),
                r("training.batch_size", 32.0, 192.0),
                r("training.upsample_ratio", 0.0, 5.0),
                r("features.max_distance", 7.0, 23.0),
            ],
        }
    }
}

impl SweepConfig {
    /// Evenly spaced values over the envelope of `param`.
    pub fn grid(&self, param: &str) -> Result<Vec<f64>> {
        let r = self
            .ranges
            .iter()
            .find(|r| r.param == param)
            .ok_or_else(|| Error::invalid(format!("no sweep range for {param}")))?;
        Ok(linspace(r.low, r.high, self.points))
    }
}

pub fn linspace(low: f64, high: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![low],
        n => (0..n)
            .map(|i| low + (high - low) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

impl Config {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config {
            path: origin.display().to_string(),
            message: e.to_string(),
        })?;
        cfg.validate().map_err(|e| Error::Config {
            path: origin.display().to_string(),
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&read_to_string(path)?, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        hash_json(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.cnn.validate()?;
        self.rnn.validate()?;
        let t = &self.training;
        if !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) {
            return Err(Error::invalid("training.learning_rate must be positive"));
        }
        if t.batch_size == 0 || t.ensemble_size == 0 {
            return Err(Error::invalid("training.batch_size and ensemble_size must be positive"));
        }
        if t.subtask1.halve_every == 0 || t.subtask2.halve_every == 0 {
            return Err(Error::invalid("halve_every must be positive"));
        }
        if !(t.upsample_ratio >= 0.0 && t.upsample_ratio.is_finite()) {
            return Err(Error::invalid("training.upsample_ratio must be non-negative"));
        }
        if t.folds < 2 {
            return Err(Error::invalid("training.folds must be at least 2"));
        }
        let f = &self.features;
        if f.max_distance == 0 || f.min_count == 0 {
            return Err(Error::invalid("features.max_distance and min_count must be positive"));
        }
        let e = &self.embedding;
        if e.word_dim == 0 || e.pos_dim == 0 || e.relpos_dim == 0 {
            return Err(Error::invalid("embedding dimensions must be positive"));
        }
        if !(2..=5).contains(&self.augment.lm_order) {
            return Err(Error::invalid("augment.lm_order must be in 2..=5"));
        }
        if self.workers == 0 {
            return Err(Error::invalid("workers must be positive"));
        }
        Ok(())
    }

    /// Applies `key=value` where key is a dotted field path. Besides plain
    /// fields this accepts `dropout` (drop probability for both models),
    /// `l2_lambda` (both models) and `cnn.min_width` (shifts the filter
    /// bank, keeping its size).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        self.set_inner(key, value, false)
    }

    /// Numeric [`set`](Self::set) for grids; integer settings take the
    /// nearest integer.
    pub fn set_number(&mut self, key: &str, value: f64) -> Result<()> {
        self.set_inner(key, &value.to_string(), true)
    }

    fn set_inner(&mut self, key: &str, value: &str, round: bool) -> Result<()> {
        let num = || -> Result<f64> {
            value
                .parse()
                .map_err(|_| Error::invalid(format!("{key}: {value:?} is not a number")))
        };
        match key {
            "dropout" => {
                let keep = 1.0 - num()?;
                self.cnn.dropout_keep = keep;
                self.rnn.dropout_keep = keep;
            }
            "l2_lambda" => {
                self.cnn.l2_lambda = num()?;
                self.rnn.l2_lambda = num()?;
            }
            "cnn.min_width" => {
                let lo = num()?.round() as usize;
                let n = self.cnn.filter_widths.len();
                // the bank grows from 3 widths at 2..=4 to 5 widths at 5..=9
                let n = if lo <= 2 { n } else { n.max(3 + (lo - 2) * 2 / 3) };
                self.cnn.filter_widths = (lo..lo + n).collect();
            }
            _ => {
                let mut tree = toml::Value::try_from(&*self).expect("config serializes");
                let mut slot = &mut tree;
                for part in key.split('.') {
                    slot = slot
                        .get_mut(part)
                        .ok_or_else(|| Error::invalid(format!("unknown config key {key}")))?;
                }
                *slot = match slot {
                    toml::Value::Integer(_) => {
                        let v = if round { num()?.round() } else { num()? };
                        if v < 0.0 || v.fract() != 0.0 {
                            return Err(Error::invalid(format!("{key} needs a non-negative integer")));
                        }
                        toml::Value::Integer(v as i64)
                    }
                    toml::Value::Float(_) => toml::Value::Float(num()?),
                    toml::Value::Boolean(_) => toml::Value::Boolean(value.parse().map_err(|_| {
                        Error::invalid(format!("{key}: {value:?} is not a boolean"))
                    })?),
                    toml::Value::String(_) => toml::Value::String(value.to_owned()),
                    _ => return Err(Error::invalid(format!("{key} is not a scalar setting"))),
                };
                *self = tree
                    .try_into()
                    .map_err(|e| Error::invalid(format!("{key}: {e}")))?;
            }
        }
        self.validate()
    }
}
