//! Single-shot and k-vote prediction, and test-split evaluation.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{inference_inputs, Sample};
use crate::bundle::ModelBundle;
use crate::features::{extract_features, FeatureScaler, FeatureVector};
use crate::ingest::{ClassVocabulary, ColumnInstance, Dataset};
use crate::nn::{ArchitectureConfig, Network, NnError, Pass, Tape};
use crate::rng::{self, stream};
use crate::tokenize::{encode, TokenSequence, Vocabulary};
use crate::train::metrics::{accuracy, per_class_metrics, weighted_f1_from_table};

pub const DEFAULT_K: usize = 10;

#[derive(Debug, Error)]
pub enum InferError {
    #[error("instance {instance} has no values")]
    EmptyInstance { instance: String },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("the test split is empty")]
    EmptyTestSet,
    #[error("instance {instance} has no label")]
    MissingLabel { instance: String },
    #[error("label {label:?} is not a class of this model")]
    UnknownLabel { label: String },
    #[error("index {index} is outside the dataset of {len} instances")]
    BadIndex { index: usize, len: usize },
    #[error("metric error: {0}")]
    Metrics(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Model input built from one augmented sample.
#[derive(Debug, Clone, PartialEq)]
pub enum EncodedInput {
    Single(TokenSequence),
    Multi { slots: Vec<TokenSequence>, mask: Vec<bool> },
}

pub fn encode_sample(sample: &Sample, vocab: &Vocabulary, cfg: &ArchitectureConfig) -> EncodedInput {
    match sample {
        Sample::Single(s) => EncodedInput::Single(encode(vocab, &s.text, cfg.max_len)),
        Sample::Multi(m) => EncodedInput::Multi {
            slots: m.texts.iter().map(|t| encode(vocab, t, cfg.slot_max_len)).collect(),
            mask: m.pad_mask.clone(),
        },
    }
}

pub fn forward(
    network: &Network,
    input: &EncodedInput,
    feats: &FeatureVector,
    pass: Pass<'_>,
    tape: Option<&mut Tape>,
) -> Result<Vec<f64>, NnError> {
    match input {
        EncodedInput::Single(seq) => network.forward_single(seq, feats, pass, tape),
        EncodedInput::Multi { slots, mask } => network.forward_multi(slots, mask, feats, pass, tape),
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Majority vote over per-view labels. Ties go to the highest summed
/// probability among the tied classes, then to the lowest class id.
pub fn vote_winner(labels: &[usize], dists: &[Vec<f64>]) -> usize {
    let classes = dists.first().map_or(0, Vec::len).max(labels.iter().max().map_or(0, |m| m + 1));
    let mut counts = vec![0usize; classes];
    for &y in labels {
        counts[y] += 1;
    }
    let top = counts.iter().copied().max().unwrap_or(0);
    let summed = |c: usize| dists.iter().map(|d| d.get(c).copied().unwrap_or(0.0)).sum::<f64>();
    let mut winner: Option<(usize, f64)> = None;
    for c in (0..classes).filter(|&c| counts[c] == top) {
        let s = summed(c);
        if winner.is_none_or(|(_, best)| s > best) {
            winner = Some((c, s));
        }
    }
    winner.map_or(0, |(c, _)| c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probabilities: Vec<f64>,
    pub class_id: usize,
    pub label: String,
    /// Per-class tally of the k views (k > 1 only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub votes: Option<BTreeMap<String, usize>>,
    pub k: usize,
    /// Wall time in seconds, features and tokenization included.
    pub latency_s: f64,
}

impl Prediction {
    /// Equality ignoring latency.
    pub fn same_outcome(&self, other: &Prediction) -> bool {
        self.probabilities == other.probabilities
            && self.class_id == other.class_id
            && self.label == other.label
            && self.votes == other.votes
            && self.k == other.k
    }

    pub fn confidence(&self) -> f64 {
        self.probabilities[self.class_id]
    }
}

/// Borrowed view of everything prediction needs.
#[derive(Debug, Clone, Copy)]
pub struct Predictor<'a> {
    pub network: &'a Network,
    pub vocab: &'a Vocabulary,
    pub scaler: &'a FeatureScaler,
    pub classes: &'a ClassVocabulary,
}

impl<'a> Predictor<'a> {
    pub fn new(bundle: &'a ModelBundle) -> Self {
        Predictor {
            network: &bundle.network,
            vocab: &bundle.vocab,
            scaler: &bundle.scaler,
            classes: &bundle.classes,
        }
    }

    pub fn predict(&self, instance: &ColumnInstance, k: usize, seed: u64) -> Result<Prediction, InferError> {
        let start = Instant::now();
        if k == 0 {
            return Err(InferError::ZeroK);
        }
        if instance.is_empty() {
            return Err(InferError::EmptyInstance {
                instance: instance.id.clone().unwrap_or_default(),
            });
        }
        let cfg = &self.network.config;
        let feats = self.scaler.transform(&extract_features(&instance.values));
        let mut r = rng::derive(seed, &[stream::PREDICT]);
        let samples = inference_inputs(instance, 0, cfg.mode, k, cfg.slots, cfg.fill_mode, &mut r);
        let mut dists = Vec::with_capacity(k);
        for s in &samples {
            let input = encode_sample(s, self.vocab, cfg);
            dists.push(forward(self.network, &input, &feats, Pass::Eval, None)?);
        }
        let (probabilities, class_id, votes) = if k == 1 {
            let p = dists.pop().expect("one view");
            let c = argmax(&p);
            (p, c, None)
        } else {
            let labels: Vec<usize> = dists.iter().map(|d| argmax(d)).collect();
            let winner = vote_winner(&labels, &dists);
            let classes = cfg.num_classes;
            let mean: Vec<f64> = (0..classes)
                .map(|c| dists.iter().map(|d| d[c]).sum::<f64>() / k as f64)
                .collect();
            let mut tally = BTreeMap::new();
            for &y in &labels {
                *tally.entry(self.class_name(y)).or_insert(0) += 1;
            }
            (mean, winner, Some(tally))
        };
        Ok(Prediction {
            label: self.class_name(class_id),
            probabilities,
            class_id,
            votes,
            k,
            latency_s: start.elapsed().as_secs_f64(),
        })
    }

    fn class_name(&self, id: usize) -> String {
        if id < self.classes.len() {
            self.classes.name(id).to_owned()
        } else {
            id.to_string()
        }
    }
}

/// Single-shot prediction: every value in one view.
pub fn predict_one(bundle: &ModelBundle, instance: &ColumnInstance, seed: u64) -> Result<Prediction, InferError> {
    Predictor::new(bundle).predict(instance, 1, seed)
}

/// Majority vote over `k` re-permuted views.
pub fn predict_kvote(bundle: &ModelBundle, instance: &ColumnInstance, k: usize, seed: u64) -> Result<Prediction, InferError> {
    Predictor::new(bundle).predict(instance, k, seed)
}

/// Seed of the `i`-th instance of a batch run.
pub fn instance_seed(seed: u64, i: usize) -> u64 {
    rng::derive_seed(seed, &[stream::PREDICT, i as u64])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub class: String,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorExample {
    pub source: String,
    /// Leading values joined with `", "`.
    pub examples: String,
    pub true_type: String,
    pub predicted_type: String,
}

/// Misclassified examples of one weak class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDump {
    pub class: String,
    /// Precision for low-precision dumps, recall for low-recall dumps.
    pub score: f64,
    pub examples: Vec<ErrorExample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub k: usize,
    pub n: usize,
    pub weighted_f1: f64,
    pub accuracy: f64,
    pub runtime_mean_s: f64,
    pub runtime_std_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub size_mb: Option<f64>,
    pub per_class: Vec<ClassRow>,
    pub low_precision: Vec<ErrorDump>,
    pub low_recall: Vec<ErrorDump>,
}

impl EvaluationReport {
    /// Per-class table as CSV (`type,f1,precision,recall,support`).
    pub fn per_class_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["type", "f1", "precision", "recall", "support"]).expect("in-memory write");
        for r in &self.per_class {
            w.write_record([
                r.class.clone(),
                format!("{:.6}", r.f1),
                format!("{:.6}", r.precision),
                format!("{:.6}", r.recall),
                r.support.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }

    /// JSON with the timing fields removed, for run-to-run comparisons.
    pub fn without_runtime(&self) -> EvaluationReport {
        EvaluationReport {
            runtime_mean_s: 0.0,
            runtime_std_s: 0.0,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvaluateOptions {
    pub k: usize,
    pub seed: u64,
    /// How many weakest classes to dump on each side.
    pub dump_classes: usize,
    pub dump_examples: usize,
    pub dump_values: usize,
}

impl Default for EvaluateOptions {
    fn default() -> Self {
        EvaluateOptions {
            k: DEFAULT_K,
            seed: 0,
            dump_classes: 3,
            dump_examples: 5,
            dump_values: 10,
        }
    }
}

fn mb(bytes: u64) -> f64 {
    bytes as f64 / (1024.0 * 1024.0)
}

/// Score the model on `test` indices of `dataset`. `bundle_path` fills the
/// size column from the file on disk.
pub fn evaluate(
    bundle: &ModelBundle,
    dataset: &Dataset,
    test: &[usize],
    opts: &EvaluateOptions,
    bundle_path: Option<&Path>,
) -> Result<EvaluationReport, InferError> {
    if test.is_empty() {
        return Err(InferError::EmptyTestSet);
    }
    let predictor = Predictor::new(bundle);
    let classes = &bundle.classes;
    let mut truth = Vec::with_capacity(test.len());
    let mut pred = Vec::with_capacity(test.len());
    let mut times = Vec::with_capacity(test.len());
    for &i in test {
        let inst = dataset.instances.get(i).ok_or(InferError::BadIndex {
            index: i,
            len: dataset.len(),
        })?;
        let label = inst.label.as_deref().ok_or_else(|| InferError::MissingLabel {
            instance: dataset.source(i),
        })?;
        let y = classes.id(label).ok_or_else(|| InferError::UnknownLabel {
            label: label.to_owned(),
        })?;
        let p = predictor.predict(inst, opts.k, instance_seed(opts.seed, i))?;
        truth.push(y);
        pred.push(p.class_id);
        times.push(p.latency_s);
    }
    let c = classes.len();
    let table = per_class_metrics(&truth, &pred, c).map_err(|e| InferError::Metrics(e.to_string()))?;
    let acc = accuracy(&truth, &pred).map_err(|e| InferError::Metrics(e.to_string()))?;
    let n = times.len() as f64;
    let mean = times.iter().sum::<f64>() / n;
    let std = (times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n).sqrt();

    let example = |pos: usize| {
        let i = test[pos];
        let inst = &dataset.instances[i];
        ErrorExample {
            source: dataset.source(i),
            examples: inst.values.iter().take(opts.dump_values).cloned().collect::<Vec<_>>().join(", "),
            true_type: classes.name(truth[pos]).to_owned(),
            predicted_type: classes.name(pred[pos]).to_owned(),
        }
    };
    // Weakest classes among those that occur, ties by class id.
    let weakest = |score: &dyn Fn(usize) -> f64, present: &dyn Fn(usize) -> bool| {
        let mut ids: Vec<usize> = (0..c).filter(|&k| present(k)).collect();
        ids.sort_by(|&a, &b| score(a).total_cmp(&score(b)).then(a.cmp(&b)));
        ids.truncate(opts.dump_classes);
        ids
    };
    let predicted_any = |k: usize| pred.contains(&k);
    let supported = |k: usize| table[k].support > 0;
    let low_precision = weakest(&|k| table[k].precision, &predicted_any)
        .into_iter()
        .map(|k| ErrorDump {
            class: classes.name(k).to_owned(),
            score: table[k].precision,
            examples: (0..truth.len())
                .filter(|&p| pred[p] == k && truth[p] != k)
                .take(opts.dump_examples)
                .map(example)
                .collect(),
        })
        .collect();
    let low_recall = weakest(&|k| table[k].recall, &supported)
        .into_iter()
        .map(|k| ErrorDump {
            class: classes.name(k).to_owned(),
            score: table[k].recall,
            examples: (0..truth.len())
                .filter(|&p| truth[p] == k && pred[p] != k)
                .take(opts.dump_examples)
                .map(example)
                .collect(),
        })
        .collect();

    let size_mb = match bundle_path {
        Some(p) => Some(mb(std::fs::metadata(p)
            .map_err(|e| InferError::Metrics(format!("{}: {e}", p.display())))?
            .len())),
        None => None,
    };
    Ok(EvaluationReport {
        k: opts.k,
        n: test.len(),
        weighted_f1: weighted_f1_from_table(&table),
        accuracy: acc,
        runtime_mean_s: mean,
        runtime_std_s: std,
        size_mb,
        per_class: table
            .iter()
            .enumerate()
            .map(|(k, m)| ClassRow {
                class: classes.name(k).to_owned(),
                f1: m.f1,
                precision: m.precision,
                recall: m.recall,
                support: m.support,
            })
            .collect(),
        low_precision,
        low_recall,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_lowest_on_ties() {
        assert_eq!(argmax(&[0.25, 0.5, 0.5, 0.1]), 1);
        assert_eq!(argmax(&[1.0 / 3.0; 3]), 0);
    }

    #[test]
    fn strict_majority_wins() {
        let labels = [0, 0, 0, 0, 0, 0, 0, 1, 1, 1];
        let dists = vec![vec![0.0, 1.0]; 10];
        assert_eq!(vote_winner(&labels, &dists), 0);
    }

    #[test]
    fn tie_goes_to_higher_summed_probability() {
        // five votes each; summed p(A) = 4.2, p(B) = 4.0
        let mut dists = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..5 {
            dists.push(vec![0.64, 0.36]);
            labels.push(0);
        }
        for _ in 0..5 {
            dists.push(vec![0.2, 0.44]);
            labels.push(1);
        }
        let sum_a: f64 = dists.iter().map(|d| d[0]).sum();
        let sum_b: f64 = dists.iter().map(|d| d[1]).sum();
        assert!((sum_a - 4.2).abs() < 1e-9 && (sum_b - 4.0).abs() < 1e-9);
        assert_eq!(vote_winner(&labels, &dists), 0);
        // swap which class has the larger mass
        let flipped: Vec<Vec<f64>> = dists.iter().map(|d| vec![d[1], d[0]]).collect();
        assert_eq!(vote_winner(&labels, &flipped), 1);
    }

    #[test]
    fn full_tie_goes_to_lowest_id() {
        let labels = [2, 1];
        let dists = vec![vec![0.0, 0.5, 0.5], vec![0.0, 0.5, 0.5]];
        assert_eq!(vote_winner(&labels, &dists), 1);
    }
}
