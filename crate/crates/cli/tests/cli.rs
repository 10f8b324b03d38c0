use std::fs;
use std::path::{Path, PathBuf};

use assert_cmd::Command;
use serde_json::Value;
use tempfile::TempDir;

const CONFIG: &str = r#"
version = 1

[model]
embedding_dim = 8
hidden_size = 8
feature_dim = 4
dense_widths = [8]
max_len = 32

[tokenizer]
vocab_budget = 100

[train]
epochs = 3
batch_size = 8
learning_rate = 1e-3
"#;

fn coltype() -> Command {
    Command::cargo_bin("coltype").unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        Workspace {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn synth(&self, per_class: usize) -> PathBuf {
        let out = self.path("corpus.jsonl");
        coltype()
            .args(["synth", "--preset", "sanity", "--per-class", &per_class.to_string(), "--seed", "4", "--out", p(&out)])
            .assert()
            .success();
        out
    }

    fn train(&self, data: &Path) -> PathBuf {
        let cfg = self.path("cfg.toml");
        fs::write(&cfg, CONFIG).unwrap();
        let model = self.path("model.dcom");
        coltype()
            .args(["train", "--data", p(data), "--config", p(&cfg), "--out", p(&model), "--seed", "1"])
            .assert()
            .success();
        model
    }

    fn evaluate(&self, model: &Path, data: &Path) -> Value {
        let out = coltype()
            .args(["evaluate", "--model", p(model), "--data", p(data), "--k", "3", "--seed", "2"])
            .args(["--split", p(&self.path("model.dcom.split.json"))])
            .args(["--per-class", p(&self.path("per_class.csv"))])
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        serde_json::from_slice(&out.stdout).unwrap()
    }
}

fn lines(bytes: &[u8]) -> Vec<Value> {
    String::from_utf8(bytes.to_vec())
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn strip_runtime(mut v: Value) -> Value {
    let obj = v.as_object_mut().unwrap();
    obj.remove("runtime_mean_s");
    obj.remove("runtime_std_s");
    v
}

#[test]
fn synth_writes_labeled_jsonl() {
    let ws = Workspace::new();
    let corpus = ws.synth(5);
    let rows = lines(&fs::read(&corpus).unwrap());
    assert_eq!(rows.len(), 10);
    assert!(rows.iter().all(|r| r["label"].is_string() && r["values"].is_array()));
}

#[test]
fn synth_rejects_unknown_preset() {
    let ws = Workspace::new();
    coltype()
        .args(["synth", "--preset", "nope", "--out", p(&ws.path("x.jsonl"))])
        .assert()
        .code(1);
}

#[test]
fn features_dump_has_one_row_per_column() {
    let ws = Workspace::new();
    let corpus = ws.synth(3);
    let out = coltype().args(["features", "dump", "--data", p(&corpus)]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 7);
    assert_eq!(rows[0].split(',').count(), 20);
    assert!(rows[0].starts_with("source,"));
}

#[test]
fn augment_streams_samples() {
    let ws = Workspace::new();
    let corpus = ws.synth(2);
    let out = coltype()
        .args(["augment", "--data", p(&corpus), "--samples", "3", "--seed", "9"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let single = lines(&out.stdout);
    assert_eq!(single.len(), 12);
    assert!(single.iter().all(|s| s["text"].is_string() && s["r"].as_u64().unwrap() >= 1));

    let out = coltype()
        .args(["augment", "--data", p(&corpus), "--mode", "multi", "--slots", "4", "--seed", "9"])
        .output()
        .unwrap();
    assert!(out.status.success());
    for s in lines(&out.stdout) {
        assert_eq!(s["texts"].as_array().unwrap().len(), 4);
        assert_eq!(s["mask"].as_array().unwrap().len(), 4);
    }
}

#[test]
fn train_predict_evaluate_explain() {
    let ws = Workspace::new();
    let corpus = ws.synth(20);
    let model = ws.train(&corpus);
    assert!(fs::read(&model).unwrap().starts_with(b"DCOM"));
    let epochs = fs::read_to_string(ws.path("model.dcom.epochs.csv")).unwrap();
    assert_eq!(epochs.lines().count(), 4);
    assert!(epochs.starts_with("epoch,"));

    let out = coltype()
        .args(["predict", "--model", p(&model), "--data", p(&corpus), "--k", "3"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let preds = lines(&out.stdout);
    assert_eq!(preds.len(), 40);
    for pred in &preds {
        assert!(pred["source"].is_string());
        assert!(["day", "gender"].contains(&pred["label"].as_str().unwrap()));
        let c = pred["confidence"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&c));
        let votes: u64 = pred["votes"].as_object().unwrap().values().map(|v| v.as_u64().unwrap()).sum();
        assert_eq!(votes, 3);
    }

    let report = ws.evaluate(&model, &corpus);
    assert_eq!(report["k"], 3);
    assert!(report["weighted_f1"].as_f64().is_some());
    assert!(report["runtime_mean_s"].as_f64().unwrap() > 0.0);
    let size = fs::metadata(&model).unwrap().len() as f64 / (1024.0 * 1024.0);
    assert!((report["size_mb"].as_f64().unwrap() - size).abs() < 1e-12);
    let table = fs::read_to_string(ws.path("per_class.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);

    let out = coltype().args(["explain", "--model", p(&model)]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 20);
    let out = coltype()
        .args(["explain", "--model", p(&model), "--format", "csv"])
        .output()
        .unwrap();
    let csv = String::from_utf8(out.stdout).unwrap();
    assert!(csv.starts_with("rank,feature,score\n1,"));
}

#[test]
fn pipeline_is_deterministic() {
    let run = || {
        let ws = Workspace::new();
        let corpus = ws.synth(10);
        let model = ws.train(&corpus);
        let report = strip_runtime(ws.evaluate(&model, &corpus));
        (fs::read(&model).unwrap(), report)
    };
    let (a_model, a_report) = run();
    let (b_model, b_report) = run();
    assert_eq!(a_model, b_model);
    assert_eq!(a_report, b_report);
}

#[test]
fn malformed_line_is_a_data_error() {
    let ws = Workspace::new();
    let data = ws.path("bad.jsonl");
    fs::write(&data, "{\"values\":[\"a\"]}\n{\"values\": [\n").unwrap();
    let corpus = ws.synth(5);
    let model = ws.train(&corpus);
    let out = coltype()
        .args(["predict", "--model", p(&model), "--data", p(&data)])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn corrupt_model_is_a_data_error() {
    let ws = Workspace::new();
    let model = ws.path("broken.dcom");
    fs::write(&model, b"DCOM\x01\x00garbage").unwrap();
    coltype().args(["explain", "--model", p(&model)]).assert().code(2);
}

#[test]
fn usage_errors_exit_one() {
    coltype().arg("frobnicate").assert().code(1);
    coltype().args(["predict", "--bogus"]).assert().code(1);
    coltype().args(["predict", "--model", "m", "--data", "d", "--k", "0"]).assert().code(1);
    coltype().arg("--help").assert().code(0);
}
