//! Training loop: one fresh permutation sample per training column per
//! epoch, mini-batch Adam on softmax cross-entropy, plateau learning-rate
//! reduction and early stopping on validation support-weighted F1.
//!
//! Batches are split into fixed chunks whose gradients are summed in chunk
//! order, so results do not depend on the worker count.

pub mod config;
pub mod metrics;
pub mod optim;

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{ClassWeightSpec, Hyperparams, ModelSection, TokenizerSection, TrainConfig};
pub use metrics::{accuracy, per_class_metrics, support_weighted_f1, ClassMetrics};
pub use optim::{adam_step, cross_entropy, AdamConfig, OptimizerState, PlateauScheduler};

use crate::augment::{sample_multi, sample_single, ModelKind, Sample};
use crate::bundle::{ModelBundle, TrainingMeta};
use crate::features::{extract_features, FeatureError, FeatureScaler, FeatureVector};
use crate::infer::{encode_sample, forward, EncodedInput, InferError, Predictor};
use crate::ingest::{Dataset, DatasetSplit, IngestError};
use crate::nn::{Network, NnError, Params, Pass, Tape};
use crate::rng::{self, stream};
use crate::tokenize::{build_vocab, TokenizeError, Vocabulary};

/// Samples per gradient chunk.
const CHUNK: usize = 8;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("label lists are empty")]
    EmptyLabels,
    #[error("label lists differ in length ({truth} vs {pred})")]
    LabelLength { truth: usize, pred: usize },
    #[error("label {label} is out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("non-finite gradient in {tensor}")]
    NonFiniteGradient { tensor: String },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("instance {instance} in the {split} split has no label")]
    MissingLabel { instance: String, split: &'static str },
    #[error("the {0} split is empty")]
    EmptySplit(&'static str),
    #[error("class {class:?} has no training instance")]
    MissingClass { class: String },
    #[error("training diverged in epoch {epoch}: {reason}")]
    Diverged {
        epoch: usize,
        reason: String,
        /// Parameters of the best epoch before the failure.
        checkpoint: Box<ModelBundle>,
    },
    #[error("validation failed: {0}")]
    Validation(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Tokenize(#[from] TokenizeError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl From<InferError> for TrainError {
    fn from(e: InferError) -> Self {
        TrainError::Validation(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub val_f1: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
    pub wall_time_s: f64,
}

impl EpochReport {
    /// Equality ignoring wall time.
    pub fn same_metrics(&self, other: &EpochReport) -> bool {
        self.epoch == other.epoch
            && self.train_loss == other.train_loss
            && self.val_accuracy == other.val_accuracy
            && self.val_f1 == other.val_f1
            && self.lr == other.lr
    }
}

/// CSV log with one row per epoch, flushed as it goes.
pub struct EpochLog {
    writer: csv::Writer<std::fs::File>,
}

impl EpochLog {
    pub fn create(path: &Path) -> Result<Self, TrainError> {
        let writer = csv::Writer::from_path(path).map_err(|e| TrainError::Io {
            path: path.display().to_string(),
            source: std::io::Error::other(e.to_string()),
        })?;
        Ok(EpochLog { writer })
    }

    pub fn append(&mut self, r: &EpochReport) -> std::io::Result<()> {
        self.writer.serialize(r).map_err(std::io::Error::other)?;
        self.writer.flush()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub seed: u64,
    pub threads: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { seed: 0, threads: 1 }
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub bundle: ModelBundle,
    pub reports: Vec<EpochReport>,
    /// Dataset indices the feature scaler was fitted on.
    pub scaler_fit_indices: Vec<usize>,
    pub stopped_early: bool,
}

fn labels_of(dataset: &Dataset, indices: &[usize], split: &'static str) -> Result<Vec<usize>, TrainError> {
    indices
        .iter()
        .map(|&i| {
            dataset.instances[i]
                .label
                .as_deref()
                .and_then(|l| dataset.classes.id(l))
                .ok_or_else(|| TrainError::MissingLabel {
                    instance: dataset.source(i),
                    split,
                })
        })
        .collect()
}

fn load_vocab(cfg: &TokenizerSection, dataset: &Dataset, train: &[usize]) -> Result<Vocabulary, TrainError> {
    if let Some(path) = &cfg.vocab_file {
        let file = std::fs::File::open(path).map_err(|e| TrainError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        return Ok(Vocabulary::read_from(cfg.kind, std::io::BufReader::new(file))?);
    }
    let corpus = train
        .iter()
        .flat_map(|&i| dataset.instances[i].values.iter().map(String::as_str));
    Ok(build_vocab(corpus, cfg.kind, cfg.vocab_budget)?)
}

fn training_sample(dataset: &Dataset, i: usize, kind: ModelKind, net: &Network, seed: u64, epoch: usize) -> Sample {
    let mut r = rng::derive(seed, &[stream::AUGMENT, epoch as u64, i as u64]);
    let inst = &dataset.instances[i];
    match kind {
        ModelKind::Single => Sample::Single(sample_single(inst, i, &mut r)),
        ModelKind::Multi => Sample::Multi(sample_multi(inst, i, net.config.slots, net.config.fill_mode, &mut r)),
    }
}

struct Prepared<'a> {
    index: usize,
    label: usize,
    weight: f64,
    input: EncodedInput,
    feats: &'a FeatureVector,
}

/// Gradient sum and loss sum over `items`.
fn chunk_gradients(net: &Network, items: &[Prepared<'_>], seed: u64, epoch: usize) -> Result<(Params, f64), TrainError> {
    let mut grads = Params::zeros(&net.config);
    let mut loss = 0.0;
    let mut tape = Tape::new();
    for it in items {
        let mut drop_rng = rng::derive(seed, &[stream::DROPOUT, epoch as u64, it.index as u64]);
        let probs = forward(net, &it.input, it.feats, Pass::Train(&mut drop_rng), Some(&mut tape))?;
        let (l, d_logits) = cross_entropy(&probs, it.label, it.weight)?;
        loss += l;
        net.backward(&tape, &d_logits, &mut grads)?;
    }
    Ok((grads, loss))
}

pub fn train_model(dataset: &Dataset, split: &DatasetSplit, config: &TrainConfig, opts: &TrainOptions) -> Result<TrainOutcome, TrainError> {
    train_model_with(dataset, split, config, opts, |_| Ok(()))
}

/// Train and call `on_epoch` after every epoch.
pub fn train_model_with(
    dataset: &Dataset,
    split: &DatasetSplit,
    config: &TrainConfig,
    opts: &TrainOptions,
    mut on_epoch: impl FnMut(&EpochReport) -> std::io::Result<()>,
) -> Result<TrainOutcome, TrainError> {
    let hp = &config.train;
    hp.validate()?;
    split.validate(dataset.len())?;
    let seed = opts.seed;
    let train_idx = split.train();
    let val_idx = split.validation();
    if train_idx.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if hp.epochs > 0 && val_idx.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    let classes = dataset.classes.clone();
    let train_labels = labels_of(dataset, train_idx, "train")?;
    let val_labels = labels_of(dataset, val_idx, "validation")?;
    let mut seen = vec![false; classes.len()];
    for &y in &train_labels {
        seen[y] = true;
    }
    if let Some(c) = seen.iter().position(|s| !s) {
        return Err(TrainError::MissingClass {
            class: classes.name(c).to_owned(),
        });
    }
    let class_weights = hp.resolve_class_weights(&classes, &train_labels)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads.max(1))
        .build()
        .map_err(|e| TrainError::Config(e.to_string()))?;

    let vocab = load_vocab(&config.tokenizer, dataset, train_idx)?;
    let arch = config.model.architecture(vocab.len(), classes.len());
    arch.validate()?;

    let raw: Vec<FeatureVector> = pool.install(|| {
        train_idx
            .par_iter()
            .map(|&i| extract_features(&dataset.instances[i].values))
            .collect()
    });
    let scaler = FeatureScaler::fit(&raw)?;
    let scaled: Vec<FeatureVector> = raw.iter().map(|f| scaler.transform(f)).collect();
    let scaler_fit_indices = train_idx.to_vec();

    let mut meta = TrainingMeta {
        seed,
        epochs: 0,
        best_epoch: None,
        best_validation_f1: None,
    };
    let assemble = |network: Network, meta: &TrainingMeta| ModelBundle {
        network,
        vocab: vocab.clone(),
        scaler: scaler.clone(),
        classes: classes.clone(),
        meta: meta.clone(),
    };

    if hp.epochs == 0 {
        // An untrained model predicts the uniform distribution.
        let network = Network::zeros(arch)?;
        return Ok(TrainOutcome {
            bundle: assemble(network, &meta),
            reports: Vec::new(),
            scaler_fit_indices,
            stopped_early: false,
        });
    }

    let mut net = Network::new(arch, &mut rng::derive(seed, &[stream::INIT]))?;
    if let Some(path) = &config.tokenizer.embeddings_file {
        let file = std::fs::File::open(path).map_err(|e| TrainError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let rows = net.params.import_embeddings(&vocab, std::io::BufReader::new(file))?;
        info!("imported {rows} embedding rows from {}", path.display());
    }

    let mut optimizer = OptimizerState::new(&net.params, hp.learning_rate, hp.adam());
    let mut scheduler = PlateauScheduler {
        factor: hp.lr_factor,
        patience: hp.lr_patience,
        threshold: hp.lr_threshold,
        min_lr: hp.min_lr,
        ..PlateauScheduler::new(hp.learning_rate)
    };
    let mut best: Option<(f64, Params, usize)> = None;
    let mut since_best = 0;
    let mut reports = Vec::new();
    let mut stopped_early = false;
    // position in train_idx -> scaled features
    let mut order: Vec<usize> = (0..train_idx.len()).collect();

    let diverged = |epoch: usize, reason: String, best: &Option<(f64, Params, usize)>, net: &Network, meta: &TrainingMeta| {
        let mut network = net.clone();
        if let Some((_, p, _)) = best {
            network.params = p.clone();
        }
        TrainError::Diverged {
            epoch,
            reason,
            checkpoint: Box::new(assemble(network, meta)),
        }
    };

    for epoch in 1..=hp.epochs {
        let started = Instant::now();
        let lr = optimizer.lr;
        order.sort_unstable();
        order.shuffle(&mut rng::derive(seed, &[stream::SHUFFLE, epoch as u64]));

        let prepared: Vec<Prepared<'_>> = pool.install(|| {
            order
                .par_iter()
                .map(|&pos| {
                    let i = train_idx[pos];
                    let label = train_labels[pos];
                    let sample = training_sample(dataset, i, net.config.mode, &net, seed, epoch);
                    Prepared {
                        index: i,
                        label,
                        weight: class_weights.as_ref().map_or(1.0, |w| w[label]),
                        input: encode_sample(&sample, &vocab, &net.config),
                        feats: &scaled[pos],
                    }
                })
                .collect()
        });

        let mut loss_sum = 0.0;
        for batch in prepared.chunks(hp.batch_size) {
            let chunk_results: Vec<Result<(Params, f64), TrainError>> = pool.install(|| {
                batch
                    .par_chunks(CHUNK)
                    .map(|c| chunk_gradients(&net, c, seed, epoch))
                    .collect()
            });
            let mut total: Option<(Params, f64)> = None;
            for r in chunk_results {
                let (g, l) = match r {
                    Ok(v) => v,
                    Err(TrainError::Nn(NnError::NonFinite { layer })) => {
                        return Err(diverged(epoch, format!("non-finite activation in {layer}"), &best, &net, &meta));
                    }
                    Err(e) => return Err(e),
                };
                match &mut total {
                    None => total = Some((g, l)),
                    Some((tg, tl)) => {
                        tg.add_scaled(&g, 1.0);
                        *tl += l;
                    }
                }
            }
            let (mut grads, batch_loss) = total.expect("non-empty batch");
            if !batch_loss.is_finite() {
                return Err(diverged(epoch, "loss is not finite".into(), &best, &net, &meta));
            }
            loss_sum += batch_loss;
            let scale = 1.0 / batch.len() as f64;
            for t in grads.tensors_mut() {
                t.data_mut().iter_mut().for_each(|g| *g *= scale);
            }
            if let Err(e) = adam_step(&mut net.params, &grads, &mut optimizer) {
                return Err(diverged(epoch, e.to_string(), &best, &net, &meta));
            }
        }
        let train_loss = loss_sum / prepared.len() as f64;

        let (val_f1, val_acc) = validate(&net, &vocab, &scaler, &classes, dataset, val_idx, &val_labels, seed, &pool)?;
        optimizer.lr = scheduler.step(val_f1);

        let report = EpochReport {
            epoch,
            train_loss,
            val_accuracy: val_acc,
            val_f1,
            lr,
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        info!(
            "epoch {epoch}: loss {train_loss:.5} val_f1 {val_f1:.4} val_acc {val_acc:.4} lr {lr:.2e} ({:.1}s)",
            report.wall_time_s
        );
        on_epoch(&report).map_err(|e| TrainError::Io {
            path: "epoch log".into(),
            source: e,
        })?;
        reports.push(report);
        meta.epochs = epoch;

        let improved = best.as_ref().is_none_or(|(b, _, _)| val_f1 > b + hp.lr_threshold);
        if improved {
            best = Some((val_f1, net.params.clone(), epoch));
            meta.best_epoch = Some(epoch);
            meta.best_validation_f1 = Some(val_f1);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= hp.early_stop_patience {
                info!("stopping early after epoch {epoch}");
                stopped_early = true;
                break;
            }
        }
    }

    if let Some((_, params, _)) = best {
        net.params = params;
    } else {
        warn!("no epoch completed; keeping initial parameters");
    }
    Ok(TrainOutcome {
        bundle: assemble(net, &meta),
        reports,
        scaler_fit_indices,
        stopped_early,
    })
}

/// Single-shot predictions on the validation split; returns (weighted F1, accuracy).
#[allow(clippy::too_many_arguments)]
fn validate(
    net: &Network,
    vocab: &Vocabulary,
    scaler: &FeatureScaler,
    classes: &crate::ingest::ClassVocabulary,
    dataset: &Dataset,
    indices: &[usize],
    labels: &[usize],
    seed: u64,
    pool: &rayon::ThreadPool,
) -> Result<(f64, f64), TrainError> {
    let predictor = Predictor {
        network: net,
        vocab,
        scaler,
        classes,
    };
    let preds: Vec<Result<usize, InferError>> = pool.install(|| {
        indices
            .par_iter()
            .map(|&i| {
                let s = rng::derive_seed(seed, &[stream::VALIDATE, i as u64]);
                predictor.predict(&dataset.instances[i], 1, s).map(|p| p.class_id)
            })
            .collect()
    });
    let preds: Vec<usize> = preds.into_iter().collect::<Result<_, _>>()?;
    Ok((
        support_weighted_f1(labels, &preds, classes.len())?,
        accuracy(labels, &preds)?,
    ))
}

/// Write reports as CSV.
pub fn write_reports<W: Write>(w: W, reports: &[EpochReport]) -> Result<(), csv::Error> {
    let mut writer = csv::Writer::from_writer(w);
    for r in reports {
        writer.serialize(r)?;
    }
    writer.flush()?;
    Ok(())
}
