//! Declarative training configuration (TOML).
//!
//! ```toml
//! version = 1
//!
//! [model]
//! mode = "single"            # or "multi"
//! embedding_dim = 64
//! hidden_size = 128
//! feature_dim = 64
//! dense_widths = [256]       # hidden layers; the softmax layer is implied
//! dropout = 0.3
//! aggregation = "mean"       # sum | concatenation | weighted_sum
//! slots = 45
//! fill_mode = "pad"          # with_replacement
//! max_len = 128
//! slot_max_len = 32
//!
//! [tokenizer]
//! kind = "wordpiece"         # char | word
//! vocab_budget = 8000
//! # vocab_file = "vocab.txt"
//! # embeddings_file = "vectors.txt"
//!
//! [train]
//! epochs = 100
//! batch_size = 32
//! learning_rate = 1e-4
//! early_stop_patience = 15
//! # class_weights = "balanced"  or  { gender = 2.0 }
//! ```
//!
//! Every section and key is optional; unknown keys are errors.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::optim::AdamConfig;
use super::TrainError;
use crate::augment::{FillMode, ModelKind};
use crate::ingest::ClassVocabulary;
use crate::nn::{Aggregation, ArchitectureConfig};
use crate::tokenize::TokenizerKind;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub mode: ModelKind,
    pub embedding_dim: usize,
    pub hidden_size: usize,
    pub feature_dim: usize,
    pub dense_widths: Vec<usize>,
    pub dropout: f64,
    pub aggregation: Aggregation,
    pub slots: usize,
    pub fill_mode: FillMode,
    pub max_len: usize,
    pub slot_max_len: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let a = ArchitectureConfig::default();
        ModelSection {
            mode: a.mode,
            embedding_dim: a.embedding_dim,
            hidden_size: a.hidden_size,
            feature_dim: a.feature_dim,
            dense_widths: a.dense_widths,
            dropout: a.dropout,
            aggregation: a.aggregation,
            slots: a.slots,
            fill_mode: a.fill_mode,
            max_len: a.max_len,
            slot_max_len: a.slot_max_len,
        }
    }
}

impl ModelSection {
    pub fn architecture(&self, vocab_size: usize, num_classes: usize) -> ArchitectureConfig {
        ArchitectureConfig {
            mode: self.mode,
            vocab_size,
            embedding_dim: self.embedding_dim,
            hidden_size: self.hidden_size,
            bidirectional: true,
            feature_dim: self.feature_dim,
            dense_widths: self.dense_widths.clone(),
            dropout: self.dropout,
            aggregation: self.aggregation,
            num_classes,
            slots: self.slots,
            fill_mode: self.fill_mode,
            max_len: self.max_len,
            slot_max_len: self.slot_max_len,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerSection {
    pub kind: TokenizerKind,
    pub vocab_budget: usize,
    /// Use this vocabulary instead of learning one.
    pub vocab_file: Option<PathBuf>,
    /// Initial embedding rows, one `token v1 .. vE` line each.
    pub embeddings_file: Option<PathBuf>,
}

impl Default for TokenizerSection {
    fn default() -> Self {
        TokenizerSection {
            kind: TokenizerKind::Wordpiece,
            vocab_budget: 8000,
            vocab_file: None,
            embeddings_file: None,
        }
    }
}

/// `"balanced"` or an explicit per-class table (missing classes weigh 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClassWeightSpec {
    Named(String),
    Table(BTreeMap<String, f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr_factor: f64,
    pub lr_patience: usize,
    pub lr_threshold: f64,
    pub min_lr: f64,
    /// Stop after this many epochs without validation improvement.
    pub early_stop_patience: usize,
    pub class_weights: Option<ClassWeightSpec>,
}

impl Default for Hyperparams {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Hyperparams {
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-4,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            lr_factor: 0.5,
            lr_patience: 5,
            lr_threshold: 1e-6,
            min_lr: 1e-7,
            early_stop_patience: 15,
            class_weights: None,
        }
    }
}

impl Hyperparams {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_owned()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0) || !(self.min_lr >= 0.0) {
            return bad("learning_rate must be positive and min_lr non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return bad("adam betas must be in [0, 1) and eps positive");
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) || self.lr_patience == 0 {
            return bad("lr_factor must be in (0, 1) and lr_patience positive");
        }
        if self.early_stop_patience == 0 {
            return bad("early_stop_patience must be positive");
        }
        Ok(())
    }

    /// Per-class weights, or `None` for the unweighted path.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn resolve_class_weights(
        &self,
        classes: &ClassVocabulary,
        train_labels: &[usize],
    ) -> Result<Option<Vec<f64>>, TrainError> {
        match &self.class_weights {
            None => Ok(None),
            Some(ClassWeightSpec::Named(name)) if name == "balanced" => {
                let c = classes.len();
                let mut counts = vec![0usize; c];
                for &y in train_labels {
                    counts[y] += 1;
                }
                let n = train_labels.len() as f64;
                Ok(Some(
                    counts
                        .iter()
                        .map(|&k| if k == 0 { 1.0 } else { n / (c as f64 * k as f64) })
                        .collect(),
                ))
            }
            Some(ClassWeightSpec::Named(other)) => Err(TrainError::Config(format!(
                "unknown class weighting {other:?}; use \"balanced\" or a table"
            ))),
            Some(ClassWeightSpec::Table(table)) => {
                let mut w = vec![1.0; classes.len()];
                for (name, &value) in table {
                    let id = classes
                        .id(name)
                        .ok_or_else(|| TrainError::Config(format!("class weight for unknown class {name:?}")))?;
                    if !(value > 0.0) || !value.is_finite() {
                        return Err(TrainError::Config(format!("class weight for {name:?} must be positive")));
                    }
                    w[id] = value;
                }
                Ok(Some(w))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub version: u32,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub tokenizer: TokenizerSection,
    #[serde(default)]
    pub train: Hyperparams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            version: CONFIG_VERSION,
            model: ModelSection::default(),
            tokenizer: TokenizerSection::default(),
            train: Hyperparams::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self, TrainError> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        if cfg.version != CONFIG_VERSION {
            return Err(TrainError::Config(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                cfg.version
            )));
        }
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
