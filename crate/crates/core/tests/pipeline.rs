//! End-to-end training and inference on the small two-class corpus.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use coltype::augment::ModelKind;
use coltype::bundle::ModelBundle;
use coltype::infer::{evaluate, predict_kvote, predict_one, EvaluateOptions, Prediction, Predictor};
use coltype::ingest::{generate_synthetic_corpus, make_split, ColumnInstance, Dataset, DatasetSplit, SynthSpec, DEFAULT_RATIOS};
use coltype::train::{train_model, ClassWeightSpec, TrainConfig, TrainOptions, TrainOutcome};

const SEED: u64 = 3;

fn small_config(mode: ModelKind, epochs: usize) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.model.mode = mode;
    cfg.model.embedding_dim = 16;
    cfg.model.hidden_size = 16;
    cfg.model.feature_dim = 8;
    cfg.model.dense_widths = vec![16];
    cfg.model.slots = 8;
    cfg.model.max_len = 48;
    cfg.model.slot_max_len = 8;
    cfg.tokenizer.vocab_budget = 200;
    cfg.train.epochs = epochs;
    cfg.train.batch_size = 8;
    cfg.train.learning_rate = 3e-3;
    cfg
}

fn corpus() -> &'static (Dataset, DatasetSplit) {
    static DATA: OnceLock<(Dataset, DatasetSplit)> = OnceLock::new();
    DATA.get_or_init(|| {
        let d = Dataset::new(generate_synthetic_corpus(&SynthSpec::sanity(), 50, SEED).unwrap());
        let s = make_split(d.len(), DEFAULT_RATIOS, SEED, Some(&d.label_ids())).unwrap();
        (d, s)
    })
}

fn run(cfg: &TrainConfig) -> TrainOutcome {
    let (d, s) = corpus();
    train_model(d, s, cfg, &TrainOptions { seed: SEED, threads: 1 }).unwrap()
}

fn trained() -> &'static TrainOutcome {
    static OUT: OnceLock<TrainOutcome> = OnceLock::new();
    OUT.get_or_init(|| run(&small_config(ModelKind::Single, 20)))
}

#[test]
fn learns_sanity_corpus() {
    let out = trained();
    let best = out.reports.iter().map(|r| r.val_f1).fold(0.0, f64::max);
    println!("best validation F1 {best}");
    assert!(best >= 0.95, "best validation F1 {best}");
    assert!(out.reports[4].train_loss < out.reports[0].train_loss);
    assert!(out.reports.iter().all(|r| r.train_loss.is_finite()));
}

#[test]
fn multi_mode_learns_too() {
    let out = run(&small_config(ModelKind::Multi, 10));
    let best = out.reports.iter().map(|r| r.val_f1).fold(0.0, f64::max);
    assert!(best >= 0.9, "best validation F1 {best}");
}

#[test]
fn training_is_deterministic() {
    let cfg = small_config(ModelKind::Single, 3);
    let a = run(&cfg);
    let b = run(&cfg);
    assert_eq!(a.bundle.to_bytes(), b.bundle.to_bytes());
    assert!(a.reports.iter().zip(&b.reports).all(|(x, y)| x.same_metrics(y)));
}

#[test]
fn unit_class_weights_change_nothing() {
    let plain = small_config(ModelKind::Single, 2);
    let mut weighted = plain.clone();
    weighted.train.class_weights = Some(ClassWeightSpec::Table(BTreeMap::from([
        ("day".to_owned(), 1.0),
        ("gender".to_owned(), 1.0),
    ])));
    assert_eq!(run(&plain).bundle.to_bytes(), run(&weighted).bundle.to_bytes());
}

#[test]
fn scaler_sees_only_training_rows() {
    let (_, split) = corpus();
    assert_eq!(trained().scaler_fit_indices, split.train());
}

#[test]
fn zero_epochs_predicts_uniformly() {
    let out = run(&small_config(ModelKind::Single, 0));
    let p = predict_one(&out.bundle, &ColumnInstance::new(["F", "M"], None), 0).unwrap();
    assert!(p.probabilities.iter().all(|&x| (x - 0.5).abs() < 1e-12));
    assert_eq!(p.class_id, 0);
}

#[test]
fn gender_codes_are_recognized() {
    let bundle = &trained().bundle;
    let p = predict_one(bundle, &ColumnInstance::new(["F", "M"], None), 0).unwrap();
    println!("gender confidence {}", p.confidence());
    assert_eq!(p.label, "gender");
    assert!(p.confidence() > 0.9, "confidence {}", p.confidence());
}

#[test]
fn kvote_edge_cases() {
    let bundle = &trained().bundle;
    let inst = ColumnInstance::new(["3", "4", "5", "6"], None);
    let one = predict_one(bundle, &inst, 9).unwrap();
    let k1 = predict_kvote(bundle, &inst, 1, 9).unwrap();
    assert!(one.same_outcome(&k1));

    let single = ColumnInstance::new(["17"], None);
    let a = predict_kvote(bundle, &single, 10, 1).unwrap();
    let b = predict_kvote(bundle, &single, 10, 2).unwrap();
    assert!(a.same_outcome(&b));

    let p = predict_kvote(bundle, &inst, 10, 5).unwrap();
    assert!((p.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert_eq!(p.votes.as_ref().unwrap().values().sum::<usize>(), 10);
    assert!(Predictor::new(bundle).predict(&inst, 0, 0).is_err());
    assert!(Predictor::new(bundle).predict(&ColumnInstance::new(Vec::<String>::new(), None), 1, 0).is_err());
}

#[test]
fn evaluation_report_is_consistent() {
    let (d, s) = corpus();
    let bundle = &trained().bundle;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.dcom");
    let bytes = bundle.save(&path).unwrap();
    let opts = EvaluateOptions { k: 3, seed: SEED, ..Default::default() };
    let rep = evaluate(bundle, d, s.test(), &opts, Some(&path)).unwrap();
    assert_eq!(rep.n, s.test().len());
    assert_eq!(rep.per_class.iter().map(|r| r.support).sum::<usize>(), rep.n);
    let weighted: f64 = rep.per_class.iter().map(|r| r.f1 * r.support as f64).sum::<f64>() / rep.n as f64;
    assert!((weighted - rep.weighted_f1).abs() < 1e-9);
    let size = std::fs::metadata(&path).unwrap().len();
    assert_eq!(size, bytes);
    assert!((rep.size_mb.unwrap() - size as f64 / (1024.0 * 1024.0)).abs() < 1e-12);
    assert!(rep.per_class_csv().starts_with("type,f1,precision,recall,support\n"));

    let again = evaluate(bundle, d, s.test(), &opts, Some(&path)).unwrap();
    assert_eq!(rep.without_runtime(), again.without_runtime());
}

#[test]
fn bundle_survives_disk() {
    let bundle = &trained().bundle;
    let loaded = ModelBundle::from_bytes(&bundle.to_bytes()).unwrap();
    let inst = ColumnInstance::new(["12", "13", "14"], None);
    let a = predict_kvote(bundle, &inst, 5, 4).unwrap();
    let b = predict_kvote(&loaded, &inst, 5, 4).unwrap();
    assert_eq!(a, Prediction { latency_s: a.latency_s, ..b });
}

#[test]
fn isbn_values_follow_their_pattern() {
    let re = regex::Regex::new(r"^97[89]-\d-\d{2}-\d{6}-\d$").unwrap();
    let cols = generate_synthetic_corpus(&SynthSpec::desk(), 20, 5).unwrap();
    let isbn: Vec<&ColumnInstance> = cols.iter().filter(|c| c.label.as_deref() == Some("isbn")).collect();
    assert_eq!(isbn.len(), 20);
    for c in isbn {
        for v in &c.values {
            assert!(re.is_match(v), "{v}");
        }
    }
}

#[test]
fn kvote_does_not_hurt_on_sanity() {
    let (d, s) = corpus();
    let bundle = &trained().bundle;
    let f1 = |k| {
        let opts = EvaluateOptions { k, seed: SEED, ..Default::default() };
        evaluate(bundle, d, s.test(), &opts, None).unwrap().weighted_f1
    };
    let (one, ten) = (f1(1), f1(10));
    assert!(ten >= one - 0.01, "k=1 {one}, k=10 {ten}");
}
