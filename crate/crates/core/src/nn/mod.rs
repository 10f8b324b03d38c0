//! Minimal neural-network kernel with explicit forward and backward passes.
//!
//! The classifier has two inputs. Text goes through a shared embedding and a
//! bidirectional LSTM; in multi-sequence mode every slot is encoded with the
//! same weights and the unmasked slot encodings are aggregated. The 19
//! normalised column statistics go through one dense ReLU projection
//! (`W` of shape `[19, D]`). Both are concatenated and passed through a
//! dense ReLU stack with inverted dropout and a softmax output layer.

mod lstm;
mod tensor;

use std::io::BufRead;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use lstm::LstmParams;
pub use tensor::{softmax, Tensor};

use crate::augment::{FillMode, ModelKind, MAX_SLOTS};
use crate::features::{FeatureVector, FEATURE_COUNT};
use crate::rng::Rng;
use crate::tokenize::{TokenSequence, Vocabulary};
use lstm::SequenceCache;
use tensor::{matvec_acc, matvec_t_acc, outer_acc};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite activation in layer {layer}")]
    NonFinite { layer: String },
    #[error("backward called without a recorded forward pass")]
    NoForward,
    #[error("all slots are masked; nothing to aggregate")]
    NoSlots,
    #[error("invalid architecture: {0}")]
    Config(String),
    #[error("embedding import line {line}: {message}")]
    Import { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Mean,
    Sum,
    Concatenation,
    WeightedSum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureConfig {
    pub mode: ModelKind,
    pub vocab_size: usize,
    pub embedding_dim: usize,
    pub hidden_size: usize,
    pub bidirectional: bool,
    /// Width `D` of the engineered-feature projection.
    pub feature_dim: usize,
    /// Hidden dense widths; the `num_classes` output layer is implied.
    pub dense_widths: Vec<usize>,
    pub dropout: f64,
    pub aggregation: Aggregation,
    pub num_classes: usize,
    /// Slot count `r` of multi-sequence models.
    pub slots: usize,
    pub fill_mode: FillMode,
    /// Token cap of single-sequence input.
    pub max_len: usize,
    /// Token cap of each multi-sequence slot.
    pub slot_max_len: usize,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        ArchitectureConfig {
            mode: ModelKind::Single,
            vocab_size: 8000,
            embedding_dim: 64,
            hidden_size: 128,
            bidirectional: true,
            feature_dim: 64,
            dense_widths: vec![256],
            dropout: 0.3,
            aggregation: Aggregation::Mean,
            num_classes: 2,
            slots: 45,
            fill_mode: FillMode::Pad,
            max_len: 128,
            slot_max_len: 32,
        }
    }
}

impl ArchitectureConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::Config(m.to_owned()));
        if !self.bidirectional {
            return bad("the recurrent encoder is always bidirectional");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if self.num_classes == 0 || self.vocab_size == 0 {
            return bad("num_classes and vocab_size must be positive");
        }
        if self.embedding_dim == 0 || self.hidden_size == 0 || self.feature_dim == 0 {
            return bad("layer widths must be positive");
        }
        if self.dense_widths.contains(&0) {
            return bad("dense widths must be positive");
        }
        if !(1..=MAX_SLOTS).contains(&self.slots) {
            return Err(NnError::Config(format!("slots must be in 1..={MAX_SLOTS}")));
        }
        if self.max_len == 0 || self.slot_max_len == 0 {
            return bad("token caps must be positive");
        }
        Ok(())
    }

    /// Width of the text representation fed to the dense stack.
    pub fn text_dim(&self) -> usize {
        let enc = 2 * self.hidden_size;
        match (self.mode, self.aggregation) {
            (ModelKind::Multi, Aggregation::Concatenation) => enc * self.slots,
            _ => enc,
        }
    }

    fn uses_slot_weights(&self) -> bool {
        self.mode == ModelKind::Multi && self.aggregation == Aggregation::WeightedSum
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    /// `[out, in]`
    pub w: Tensor,
    /// `[out]`
    pub b: Tensor,
}

/// All trainable tensors. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    /// `[V, E]`
    pub embedding: Tensor,
    /// Forward and backward directions.
    pub lstm: [LstmParams; 2],
    /// Engineered-feature projection `[19, D]`.
    pub feature_w: Tensor,
    pub feature_b: Tensor,
    /// Hidden layers followed by the output layer.
    pub dense: Vec<DenseParams>,
    /// One weight per slot for weighted-sum aggregation.
    pub slot_weights: Option<Tensor>,
}

impl Params {
    pub fn zeros(cfg: &ArchitectureConfig) -> Self {
        let (e, h) = (cfg.embedding_dim, cfg.hidden_size);
        let lstm = || LstmParams {
            w_in: Tensor::zeros(&[4 * h, e]),
            w_rec: Tensor::zeros(&[4 * h, h]),
            bias: Tensor::zeros(&[4 * h]),
        };
        let mut dense = Vec::new();
        let mut width = cfg.text_dim() + cfg.feature_dim;
        for &out in cfg.dense_widths.iter().chain(std::iter::once(&cfg.num_classes)) {
            dense.push(DenseParams {
                w: Tensor::zeros(&[out, width]),
                b: Tensor::zeros(&[out]),
            });
            width = out;
        }
        Params {
            embedding: Tensor::zeros(&[cfg.vocab_size, e]),
            lstm: [lstm(), lstm()],
            feature_w: Tensor::zeros(&[FEATURE_COUNT, cfg.feature_dim]),
            feature_b: Tensor::zeros(&[cfg.feature_dim]),
            dense,
            slot_weights: cfg.uses_slot_weights().then(|| Tensor::zeros(&[cfg.slots])),
        }
    }

    /// Xavier-uniform weights, uniform(-0.05, 0.05) embeddings, zero biases
    /// except the LSTM forget gates (1.0); slot weights start at `1/r`.
    pub fn init(cfg: &ArchitectureConfig, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(cfg);
        let mut uniform = |t: &mut Tensor, limit: f64| {
            for x in t.data_mut() {
                *x = rng.random_range(-limit..=limit);
            }
        };
        let xavier = |fan_in: usize, fan_out: usize| (6.0 / (fan_in + fan_out) as f64).sqrt();
        uniform(&mut p.embedding, 0.05);
        let h = cfg.hidden_size;
        for dir in &mut p.lstm {
            uniform(&mut dir.w_in, xavier(cfg.embedding_dim, 4 * h));
            uniform(&mut dir.w_rec, xavier(h, 4 * h));
            dir.bias.data_mut()[h..2 * h].fill(1.0);
        }
        uniform(&mut p.feature_w, xavier(FEATURE_COUNT, cfg.feature_dim));
        for layer in &mut p.dense {
            let (out, inp) = (layer.w.shape()[0], layer.w.shape()[1]);
            uniform(&mut layer.w, xavier(inp, out));
        }
        if let Some(w) = &mut p.slot_weights {
            w.fill(1.0 / cfg.slots as f64);
        }
        p
    }

    /// Tensors with stable names, in a fixed order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![("embedding".into(), &self.embedding)];
        for (dir, p) in ["fwd", "bwd"].iter().zip(&self.lstm) {
            out.push((format!("lstm.{dir}.w_in"), &p.w_in));
            out.push((format!("lstm.{dir}.w_rec"), &p.w_rec));
            out.push((format!("lstm.{dir}.bias"), &p.bias));
        }
        out.push(("features.w".into(), &self.feature_w));
        out.push(("features.b".into(), &self.feature_b));
        for (i, d) in self.dense.iter().enumerate() {
            out.push((format!("dense.{i}.w"), &d.w));
            out.push((format!("dense.{i}.b"), &d.b));
        }
        if let Some(w) = &self.slot_weights {
            out.push(("aggregate.slot_weights".into(), w));
        }
        out
    }

    /// Mutable tensors in the same order as [`Params::named`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = vec![&mut self.embedding];
        for p in &mut self.lstm {
            out.push(&mut p.w_in);
            out.push(&mut p.w_rec);
            out.push(&mut p.bias);
        }
        out.push(&mut self.feature_w);
        out.push(&mut self.feature_b);
        for d in &mut self.dense {
            out.push(&mut d.w);
            out.push(&mut d.b);
        }
        if let Some(w) = &mut self.slot_weights {
            out.push(w);
        }
        out
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.named().into_iter().map(|(_, t)| t).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn zero_(&mut self) {
        for t in self.tensors_mut() {
            t.fill(0.0);
        }
    }

    /// `self += other * scale`.
    pub fn add_scaled(&mut self, other: &Params, scale: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y * scale;
            }
        }
    }

    /// Overwrite embedding rows from a whitespace-separated text file with
    /// lines `token v1 .. vE`. Tokens missing from `vocab` are skipped.
    /// Returns the number of rows written.
    pub fn import_embeddings<R: BufRead>(&mut self, vocab: &Vocabulary, reader: R) -> Result<usize, NnError> {
        let dim = self.embedding.shape()[1];
        let mut written = 0;
        for (i, line) in reader.lines().enumerate() {
            let err = |message: String| NnError::Import { line: i + 1, message };
            let line = line.map_err(|e| err(e.to_string()))?;
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let values: Vec<f64> = parts
                .map(|v| v.parse::<f64>().map_err(|e| err(e.to_string())))
                .collect::<Result<_, _>>()?;
            if values.len() != dim {
                return Err(err(format!("expected {dim} values, found {}", values.len())));
            }
            if let Some(id) = vocab.id(token).filter(|&id| (id as usize) < self.embedding.shape()[0]) {
                self.embedding.row_mut(id as usize).copy_from_slice(&values);
                written += 1;
            }
        }
        Ok(written)
    }
}

/// Whether a forward pass applies dropout.
pub enum Pass<'a> {
    Eval,
    Train(&'a mut Rng),
}

impl Pass<'_> {
    fn rng(&mut self) -> Option<&mut Rng> {
        match self {
            Pass::Eval => None,
            Pass::Train(r) => Some(r),
        }
    }
}

/// Inverted dropout in place; returns the applied mask (already scaled).
pub fn dropout(x: &mut [f64], rate: f64, rng: &mut Rng) -> Vec<f64> {
    let keep = 1.0 - rate;
    let mask: Vec<f64> = x
        .iter()
        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    for (v, m) in x.iter_mut().zip(&mask) {
        *v *= m;
    }
    mask
}

#[derive(Debug, Default)]
struct DenseCache {
    input: Vec<f64>,
    /// Pre-activation output, kept for the ReLU derivative.
    pre: Vec<f64>,
    /// Dropout mask applied to the activated output, if any.
    mask: Option<Vec<f64>>,
}

#[derive(Debug)]
#[allow(clippy::large_enum_variant)]
enum TextCache {
    Single(SequenceCache),
    Multi {
        /// `(slot, cache, encoding)` for every unmasked slot.
        slots: Vec<(usize, SequenceCache, Vec<f64>)>,
    },
}

#[derive(Debug)]
struct Recorded {
    text: TextCache,
    features: Vec<f64>,
    feature_pre: Vec<f64>,
    /// Dropout mask on the concatenated head input.
    input_mask: Option<Vec<f64>>,
    dense: Vec<DenseCache>,
    probs: Vec<f64>,
}

/// Activations recorded by a forward pass for the following backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    recorded: Option<Recorded>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn is_recorded(&self) -> bool {
        self.recorded.is_some()
    }

    /// Output distribution of the recorded pass.
    pub fn probs(&self) -> Option<&[f64]> {
        self.recorded.as_ref().map(|r| r.probs.as_slice())
    }

    pub fn clear(&mut self) {
        self.recorded = None;
    }
}

fn check_finite(layer: &str, xs: &[f64]) -> Result<(), NnError> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(NnError::NonFinite {
            layer: layer.to_owned(),
        })
    }
}

/// The classifier: configuration plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub config: ArchitectureConfig,
    pub params: Params,
}

impl Network {
    pub fn new(config: ArchitectureConfig, rng: &mut Rng) -> Result<Self, NnError> {
        config.validate()?;
        let params = Params::init(&config, rng);
        Ok(Network { config, params })
    }

    pub fn zeros(config: ArchitectureConfig) -> Result<Self, NnError> {
        config.validate()?;
        let params = Params::zeros(&config);
        Ok(Network { config, params })
    }

    /// Check that `params` has exactly the shapes `config` implies.
    pub fn from_parts(config: ArchitectureConfig, params: Params) -> Result<Self, NnError> {
        config.validate()?;
        let expected = Params::zeros(&config);
        let want = expected.named();
        let got = params.named();
        if want.len() != got.len() {
            return Err(NnError::Shape(format!(
                "expected {} parameter tensors, got {}",
                want.len(),
                got.len()
            )));
        }
        for ((name, a), (_, b)) in want.iter().zip(&got) {
            if a.shape() != b.shape() {
                return Err(NnError::Shape(format!(
                    "{name}: expected {:?}, got {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(Network { config, params })
    }

    fn check_ids(&self, ids: &[u32]) -> Result<(), NnError> {
        match ids.iter().find(|&&id| id as usize >= self.config.vocab_size) {
            Some(id) => Err(NnError::Shape(format!(
                "token id {id} outside vocabulary of {}",
                self.config.vocab_size
            ))),
            None => Ok(()),
        }
    }

    fn encode_text(&self, seq: &TokenSequence, keep: bool) -> Result<(Vec<f64>, SequenceCache), NnError> {
        let ids = seq.real_ids();
        self.check_ids(ids)?;
        let (enc, cache) = lstm::encode(&self.params.lstm, &self.params.embedding, ids, keep);
        check_finite("lstm", &enc)?;
        Ok((enc, cache))
    }

    /// Single-sequence forward pass. Returns class probabilities.
    pub fn forward_single(
        &self,
        tokens: &TokenSequence,
        feats: &FeatureVector,
        pass: Pass<'_>,
        tape: Option<&mut Tape>,
    ) -> Result<Vec<f64>, NnError> {
        if self.config.mode != ModelKind::Single {
            return Err(NnError::Shape("single-sequence input to a multi-sequence model".into()));
        }
        let (enc, cache) = self.encode_text(tokens, tape.is_some())?;
        self.head(enc, TextCache::Single(cache), feats, pass, tape)
    }

    /// Multi-sequence forward pass over exactly `slots` token sequences.
    pub fn forward_multi(
        &self,
        slots: &[TokenSequence],
        pad_mask: &[bool],
        feats: &FeatureVector,
        pass: Pass<'_>,
        tape: Option<&mut Tape>,
    ) -> Result<Vec<f64>, NnError> {
        let cfg = &self.config;
        if cfg.mode != ModelKind::Multi {
            return Err(NnError::Shape("multi-sequence input to a single-sequence model".into()));
        }
        if slots.len() != cfg.slots || pad_mask.len() != cfg.slots {
            return Err(NnError::Shape(format!(
                "expected {} slots, got {} sequences and {} mask entries",
                cfg.slots,
                slots.len(),
                pad_mask.len()
            )));
        }
        let keep = tape.is_some();
        let mut encoded = Vec::new();
        for (s, seq) in slots.iter().enumerate().filter(|(s, _)| pad_mask[*s]) {
            let (enc, cache) = self.encode_text(seq, keep)?;
            encoded.push((s, cache, enc));
        }
        if encoded.is_empty() {
            return Err(NnError::NoSlots);
        }
        let enc_dim = 2 * cfg.hidden_size;
        let mut text = vec![0.0; cfg.text_dim()];
        let count = encoded.len() as f64;
        for (s, _, enc) in &encoded {
            match cfg.aggregation {
                Aggregation::Mean => text.iter_mut().zip(enc).for_each(|(t, e)| *t += e / count),
                Aggregation::Sum => text.iter_mut().zip(enc).for_each(|(t, e)| *t += e),
                Aggregation::WeightedSum => {
                    let w = self.params.slot_weights.as_ref().expect("weighted sum has slot weights").data()[*s];
                    text.iter_mut().zip(enc).for_each(|(t, e)| *t += w * e);
                }
                Aggregation::Concatenation => text[s * enc_dim..(s + 1) * enc_dim].copy_from_slice(enc),
            }
        }
        check_finite("aggregate", &text)?;
        if !keep {
            encoded.clear();
        }
        self.head(text, TextCache::Multi { slots: encoded }, feats, pass, tape)
    }

    fn head(
        &self,
        text: Vec<f64>,
        text_cache: TextCache,
        feats: &FeatureVector,
        mut pass: Pass<'_>,
        tape: Option<&mut Tape>,
    ) -> Result<Vec<f64>, NnError> {
        let p = &self.params;
        let d = self.config.feature_dim;
        let mut feature_pre = p.feature_b.data().to_vec();
        matvec_t_acc(p.feature_w.data(), feats.as_slice(), &mut feature_pre);
        check_finite("features", &feature_pre)?;

        let mut x = text;
        x.extend(feature_pre.iter().map(|&u| u.max(0.0)));
        debug_assert_eq!(x.len(), self.config.text_dim() + d);

        let rate = self.config.dropout;
        let input_mask = match pass.rng() {
            Some(rng) if rate > 0.0 => Some(dropout(&mut x, rate, rng)),
            _ => None,
        };

        let layers = p.dense.len();
        let mut caches = Vec::with_capacity(layers);
        for (li, layer) in p.dense.iter().enumerate() {
            let mut z = layer.b.data().to_vec();
            matvec_acc(layer.w.data(), &x, &mut z);
            check_finite(&format!("dense.{li}"), &z)?;
            let last = li + 1 == layers;
            let mut out: Vec<f64> = if last { z.clone() } else { z.iter().map(|&v| v.max(0.0)).collect() };
            let mask = match pass.rng() {
                Some(rng) if rate > 0.0 && !last => Some(dropout(&mut out, rate, rng)),
                _ => None,
            };
            caches.push(DenseCache {
                input: std::mem::replace(&mut x, out),
                pre: z,
                mask,
            });
        }
        let probs = softmax(&x);
        check_finite("softmax", &probs)?;

        if let Some(tape) = tape {
            tape.recorded = Some(Recorded {
                text: text_cache,
                features: feats.0.to_vec(),
                feature_pre,
                input_mask,
                dense: caches,
                probs: probs.clone(),
            });
        }
        Ok(probs)
    }

    /// Accumulate parameter gradients into `grads` given the gradient of the
    /// loss with respect to the output logits. Parameters are not touched.
    pub fn backward(&self, tape: &Tape, d_logits: &[f64], grads: &mut Params) -> Result<(), NnError> {
        let rec = tape.recorded.as_ref().ok_or(NnError::NoForward)?;
        let cfg = &self.config;
        let p = &self.params;
        if d_logits.len() != cfg.num_classes {
            return Err(NnError::Shape(format!(
                "logit gradient has {} entries for {} classes",
                d_logits.len(),
                cfg.num_classes
            )));
        }

        let mut dy = d_logits.to_vec();
        let layers = p.dense.len();
        for li in (0..layers).rev() {
            let cache = &rec.dense[li];
            if li + 1 != layers {
                // dy is w.r.t. the dropped-out activation of this layer
                if let Some(mask) = &cache.mask {
                    dy.iter_mut().zip(mask).for_each(|(g, m)| *g *= m);
                }
                dy.iter_mut().zip(&cache.pre).for_each(|(g, &z)| {
                    if z <= 0.0 {
                        *g = 0.0
                    }
                });
            }
            let g = &mut grads.dense[li];
            outer_acc(g.w.data_mut(), &dy, &cache.input);
            g.b.data_mut().iter_mut().zip(&dy).for_each(|(b, d)| *b += d);
            let mut dx = vec![0.0; cache.input.len()];
            matvec_t_acc(p.dense[li].w.data(), &dy, &mut dx);
            dy = dx;
        }
        if let Some(mask) = &rec.input_mask {
            dy.iter_mut().zip(mask).for_each(|(g, m)| *g *= m);
        }

        let text_dim = cfg.text_dim();
        let (d_text, d_feat) = dy.split_at(text_dim);
        let d_pre: Vec<f64> = d_feat
            .iter()
            .zip(&rec.feature_pre)
            .map(|(&g, &u)| if u > 0.0 { g } else { 0.0 })
            .collect();
        outer_acc(grads.feature_w.data_mut(), &rec.features, &d_pre);
        grads.feature_b.data_mut().iter_mut().zip(&d_pre).for_each(|(b, d)| *b += d);

        match &rec.text {
            TextCache::Single(cache) => {
                lstm::backward(&p.lstm, &p.embedding, cache, d_text, &mut grads.lstm, &mut grads.embedding);
            }
            TextCache::Multi { slots } => {
                let enc_dim = 2 * cfg.hidden_size;
                let count = slots.len() as f64;
                for (s, cache, enc) in slots {
                    let d_enc: Vec<f64> = match cfg.aggregation {
                        Aggregation::Mean => d_text.iter().map(|g| g / count).collect(),
                        Aggregation::Sum => d_text.to_vec(),
                        Aggregation::WeightedSum => {
                            let w = p.slot_weights.as_ref().expect("slot weights").data()[*s];
                            let gw = grads.slot_weights.as_mut().expect("slot weight grads");
                            gw.data_mut()[*s] += tensor::dot(d_text, enc);
                            d_text.iter().map(|g| g * w).collect()
                        }
                        Aggregation::Concatenation => d_text[s * enc_dim..(s + 1) * enc_dim].to_vec(),
                    };
                    lstm::backward(&p.lstm, &p.embedding, cache, &d_enc, &mut grads.lstm, &mut grads.embedding);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::tokenize::{encode, TokenizerKind};

    fn tiny(mode: ModelKind, aggregation: Aggregation) -> ArchitectureConfig {
        ArchitectureConfig {
            mode,
            vocab_size: 12,
            embedding_dim: 4,
            hidden_size: 3,
            feature_dim: 4,
            dense_widths: vec![5],
            dropout: 0.3,
            aggregation,
            num_classes: 3,
            slots: 4,
            max_len: 10,
            slot_max_len: 5,
            ..Default::default()
        }
    }

    fn seq(ids: &[u32], max_len: usize) -> TokenSequence {
        let mut v = ids.to_vec();
        v.resize(max_len, 0);
        let mut mask = vec![1; ids.len()];
        mask.resize(max_len, 0);
        TokenSequence {
            ids: v,
            attention_mask: mask,
            max_len,
        }
    }

    fn feats(seed: u64) -> FeatureVector {
        let mut r = rng::derive(seed, &[99]);
        FeatureVector(std::array::from_fn(|_| r.random_range(-1.0..1.0)))
    }

    #[test]
    fn zero_params_give_uniform_output() {
        let net = Network::zeros(tiny(ModelKind::Single, Aggregation::Mean)).unwrap();
        let p = net.forward_single(&seq(&[3, 4, 5], 10), &feats(0), Pass::Eval, None).unwrap();
        assert_eq!(p, vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn output_is_a_distribution_and_deterministic() {
        let net = Network::new(tiny(ModelKind::Single, Aggregation::Mean), &mut rng::derive(1, &[])).unwrap();
        let s = seq(&[3, 4, 11, 2, 7], 10);
        let a = net.forward_single(&s, &feats(1), Pass::Eval, None).unwrap();
        let b = net.forward_single(&s, &feats(1), Pass::Eval, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        assert!(a.iter().all(|&p| p > 0.0 && p < 1.0));
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_ids_and_wrong_mode() {
        let net = Network::new(tiny(ModelKind::Single, Aggregation::Mean), &mut rng::derive(1, &[])).unwrap();
        assert!(matches!(
            net.forward_single(&seq(&[12], 10), &feats(0), Pass::Eval, None),
            Err(NnError::Shape(_))
        ));
        assert!(net.forward_multi(&[], &[], &feats(0), Pass::Eval, None).is_err());
    }

    #[test]
    fn backward_requires_forward() {
        let net = Network::zeros(tiny(ModelKind::Single, Aggregation::Mean)).unwrap();
        let mut g = Params::zeros(&net.config);
        assert!(matches!(net.backward(&Tape::new(), &[0.0; 3], &mut g), Err(NnError::NoForward)));
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_grads() {
        let net = Network::new(tiny(ModelKind::Single, Aggregation::Mean), &mut rng::derive(2, &[])).unwrap();
        let mut tape = Tape::new();
        net.forward_single(&seq(&[1, 2, 3], 10), &feats(2), Pass::Eval, Some(&mut tape)).unwrap();
        let mut g = Params::zeros(&net.config);
        let before = net.params.clone();
        net.backward(&tape, &[0.0; 3], &mut g).unwrap();
        assert!(g.tensors().iter().all(|t| t.data().iter().all(|&x| x == 0.0)));
        assert_eq!(net.params, before);
    }

    #[test]
    fn all_masked_slots_is_an_error() {
        let net = Network::new(tiny(ModelKind::Multi, Aggregation::Mean), &mut rng::derive(1, &[])).unwrap();
        let slots = vec![seq(&[], 5); 4];
        assert!(matches!(
            net.forward_multi(&slots, &[false; 4], &feats(0), Pass::Eval, None),
            Err(NnError::NoSlots)
        ));
    }

    #[test]
    fn identical_slots_mean_equals_single_slot() {
        let cfg = tiny(ModelKind::Multi, Aggregation::Mean);
        let net = Network::new(cfg, &mut rng::derive(4, &[])).unwrap();
        let s = seq(&[5, 6], 5);
        let all = net
            .forward_multi(&vec![s.clone(); 4], &[true; 4], &feats(4), Pass::Eval, None)
            .unwrap();
        let empty = seq(&[], 5);
        let one = net
            .forward_multi(&[s, empty.clone(), empty.clone(), empty], &[true, false, false, false], &feats(4), Pass::Eval, None)
            .unwrap();
        for (a, b) in all.iter().zip(&one) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_times_count_equals_sum() {
        let mut cfg = tiny(ModelKind::Multi, Aggregation::Mean);
        let mean_net = Network::new(cfg.clone(), &mut rng::derive(5, &[])).unwrap();
        cfg.aggregation = Aggregation::Sum;
        let sum_net = Network::from_parts(cfg, mean_net.params.clone()).unwrap();
        let slots = vec![seq(&[1, 2], 5), seq(&[3], 5), seq(&[7, 8, 9], 5), seq(&[], 5)];
        let mask = [true, true, true, false];
        let mut tm = Tape::new();
        let mut ts = Tape::new();
        mean_net.forward_multi(&slots, &mask, &feats(5), Pass::Eval, Some(&mut tm)).unwrap();
        sum_net.forward_multi(&slots, &mask, &feats(5), Pass::Eval, Some(&mut ts)).unwrap();
        let text = |t: &Tape| t.recorded.as_ref().unwrap().dense[0].input[..6].to_vec();
        for (m, s) in text(&tm).iter().zip(text(&ts)) {
            assert!((m * 3.0 - s).abs() < 1e-9);
        }
    }

    #[test]
    fn slot_order_does_not_matter_for_mean_and_sum() {
        for agg in [Aggregation::Mean, Aggregation::Sum] {
            let net = Network::new(tiny(ModelKind::Multi, agg), &mut rng::derive(6, &[])).unwrap();
            let slots = vec![seq(&[1, 2], 5), seq(&[3], 5), seq(&[7, 8, 9], 5), seq(&[4], 5)];
            let a = net.forward_multi(&slots, &[true; 4], &feats(6), Pass::Eval, None).unwrap();
            let rev: Vec<_> = slots.iter().rev().cloned().collect();
            let b = net.forward_multi(&rev, &[true; 4], &feats(6), Pass::Eval, None).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn dropout_preserves_expectation() {
        let mut r = rng::derive(8, &[]);
        let x: Vec<f64> = (1..=16).map(|i| i as f64 * 0.25).collect();
        let mut acc = vec![0.0; x.len()];
        let draws = 10_000;
        for _ in 0..draws {
            let mut y = x.clone();
            dropout(&mut y, 0.3, &mut r);
            acc.iter_mut().zip(&y).for_each(|(a, v)| *a += v);
        }
        for (a, v) in acc.iter().zip(&x) {
            let mean = a / draws as f64;
            assert!((mean - v).abs() / v < 0.02, "{mean} vs {v}");
        }
    }

    #[test]
    fn train_pass_is_seed_deterministic() {
        let net = Network::new(tiny(ModelKind::Single, Aggregation::Mean), &mut rng::derive(9, &[])).unwrap();
        let s = seq(&[1, 2, 3], 10);
        let run = || {
            let mut r = rng::derive(42, &[]);
            net.forward_single(&s, &feats(9), Pass::Train(&mut r), None).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn embedding_import() {
        let vocab = Vocabulary::from_tokens(TokenizerKind::Word, ["hello", "world"]);
        let cfg = ArchitectureConfig {
            vocab_size: vocab.len(),
            ..tiny(ModelKind::Single, Aggregation::Mean)
        };
        let mut p = Params::zeros(&cfg);
        let file = "hello 1 2 3 4\nunknown 0 0 0 0\nworld 5 6 7 8\n";
        assert_eq!(p.import_embeddings(&vocab, file.as_bytes()).unwrap(), 2);
        assert_eq!(p.embedding.row(3), &[1.0, 2.0, 3.0, 4.0]);
        assert!(p.import_embeddings(&vocab, "hello 1 2\n".as_bytes()).is_err());
        let _ = encode(&vocab, "hello", 4);
    }
}
