//! Train on the synthetic desk corpus and print per-epoch metrics.
//!
//! `cargo run --release -p coltype-core --example desk_train -- [single|multi] [epochs] [lr]`

use coltype::augment::ModelKind;
use coltype::infer::{evaluate, EvaluateOptions};
use coltype::ingest::{generate_synthetic_corpus, make_split, Dataset, SynthSpec, DEFAULT_RATIOS};
use coltype::train::{train_model_with, TrainConfig, TrainOptions};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = match args.get(1).map(String::as_str) {
        Some("multi") => ModelKind::Multi,
        _ => ModelKind::Single,
    };
    let epochs = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(20);
    let lr = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1e-3);

    let seed = 7;
    let dataset = Dataset::new(generate_synthetic_corpus(&SynthSpec::desk(), 200, seed).unwrap());
    let split = make_split(dataset.len(), DEFAULT_RATIOS, seed, Some(&dataset.label_ids())).unwrap();
    let mut cfg = TrainConfig::default();
    cfg.model.mode = mode;
    cfg.train.epochs = epochs;
    cfg.train.learning_rate = lr;
    let opts = TrainOptions { seed, threads: 1 };
    let out = train_model_with(&dataset, &split, &cfg, &opts, |r| {
        println!(
            "epoch {:>3} loss {:.4} val_f1 {:.4} lr {:.1e} {:.1}s",
            r.epoch, r.train_loss, r.val_f1, r.lr, r.wall_time_s
        );
        Ok(())
    })
    .unwrap();
    for k in [1, 10] {
        let opts = EvaluateOptions { k, seed, ..Default::default() };
        let rep = evaluate(&out.bundle, &dataset, split.test(), &opts, None).unwrap();
        println!("k={k}: test f1 {:.4} runtime {:.2e}s", rep.weighted_f1, rep.runtime_mean_s);
    }
}
