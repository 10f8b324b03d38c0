//! `coltype` command-line interface.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;

use coltype::augment::{sample_multi, sample_single, FillMode, Sample, SampleRecord, MAX_SLOTS};
use coltype::bundle::ModelBundle;
use coltype::explain::feature_importance;
use coltype::features::{extract_features, FEATURE_NAMES};
use coltype::infer::{evaluate, instance_seed, EvaluateOptions, Predictor, DEFAULT_K};
use coltype::ingest::{
    generate_synthetic_corpus, load_dataset, make_split, save_dataset, DataFormat, Dataset, DatasetSplit, SynthSpec,
    DEFAULT_RATIOS,
};
use coltype::rng::{self, stream};
use coltype::train::{train_model_with, EpochLog, TrainConfig, TrainOptions};

#[derive(Parser)]
#[command(name = "coltype", version, about = "Semantic type detection for table columns")]
struct Cli {
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Seed for every random stream.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads for gradient computation.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a bundle.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// TOML training config; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Split manifest to use; a stratified split is made and saved next to `--out` otherwise.
        #[arg(long)]
        split: Option<PathBuf>,
        /// Epoch CSV log (default: `<out>.epochs.csv`).
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Predict a type for every column of a dataset (JSONL output).
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Score a model on the test part of a split (or the whole dataset).
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
        /// Metrics JSON (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-class CSV table.
        #[arg(long)]
        per_class: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Stream permutation samples as JSONL.
    Augment {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Single)]
        mode: Mode,
        /// Samples per column.
        #[arg(long, default_value_t = 1)]
        samples: usize,
        #[arg(long, default_value_t = 45)]
        slots: usize,
        #[arg(long, value_enum, default_value_t = Fill::Pad)]
        fill: Fill,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Engineered-feature utilities.
    Features {
        #[command(subcommand)]
        command: FeaturesCommand,
    },
    /// Rank the engineered features of a model.
    Explain {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Generate a synthetic labeled corpus.
    Synth {
        /// Built-in preset: sanity, desk or confusable.
        #[arg(long, conflicts_with = "spec", required_unless_present = "spec")]
        preset: Option<String>,
        /// TOML corpus spec.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        per_class: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Subcommand)]
enum FeaturesCommand {
    /// CSV of the raw features of every column.
    Dump {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Single,
    Multi,
}

#[derive(Clone, Copy, ValueEnum)]
enum Fill {
    Pad,
    WithReplacement,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Csv,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
}

type Res<T = ()> = Result<T, CliError>;

fn data<E: std::fmt::Display>(context: &Path) -> impl FnOnce(E) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", context.display()))
}

fn io_err(path: Option<&Path>) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |e| match path {
        Some(p) => CliError::Data(format!("{}: {e}", p.display())),
        None => CliError::Data(format!("stdout: {e}")),
    }
}

fn output(path: Option<&Path>) -> Res<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(io_err(Some(p)))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn read_data(path: &Path) -> Res<Dataset> {
    load_dataset(path, DataFormat::from_path(path)).map_err(data(path))
}

fn read_model(path: &Path) -> Res<ModelBundle> {
    ModelBundle::load(path).map_err(data(path))
}

fn read_split(path: &Path, n: usize) -> Res<DatasetSplit> {
    let split = DatasetSplit::load(path).map_err(data(path))?;
    split.validate(n).map_err(data(path))?;
    Ok(split)
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    out.with_file_name(name)
}

fn cmd_train(
    data_path: &Path,
    config: Option<&Path>,
    out: &Path,
    split: Option<&Path>,
    log: Option<&Path>,
    common: &Common,
) -> Res {
    let cfg = match config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(io_err(Some(p)))?;
            TrainConfig::from_toml(&text).map_err(data(p))?
        }
        None => TrainConfig::default(),
    };
    let dataset = read_data(data_path)?;
    let split = match split {
        Some(p) => read_split(p, dataset.len())?,
        None => {
            let s = make_split(dataset.len(), DEFAULT_RATIOS, common.seed, Some(&dataset.label_ids()))
                .map_err(data(data_path))?;
            let path = sibling(out, ".split.json");
            s.save(&path).map_err(data(&path))?;
            info!("split written to {}", path.display());
            s
        }
    };
    let log_path = log.map_or_else(|| sibling(out, ".epochs.csv"), Path::to_path_buf);
    let mut epoch_log = EpochLog::create(&log_path).map_err(data(&log_path))?;
    let opts = TrainOptions {
        seed: common.seed,
        threads: common.threads,
    };
    let outcome = train_model_with(&dataset, &split, &cfg, &opts, |r| {
        info!(
            "epoch {}: loss {:.4} val_f1 {:.4} lr {:.2e}",
            r.epoch, r.train_loss, r.val_f1, r.lr
        );
        epoch_log.append(r)
    })
    .map_err(data(data_path))?;
    let bytes = outcome.bundle.save(out).map_err(data(out))?;
    eprintln!(
        "wrote {} ({bytes} bytes), best validation F1 {:.4}",
        out.display(),
        outcome.bundle.meta.best_validation_f1.unwrap_or(0.0)
    );
    Ok(())
}

#[derive(Serialize)]
struct PredictionLine<'a> {
    source: String,
    label: &'a str,
    confidence: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    votes: Option<&'a std::collections::BTreeMap<String, usize>>,
}

fn cmd_predict(model: &Path, data_path: &Path, k: usize, out: Option<&Path>, common: &Common) -> Res {
    if k == 0 {
        return Err(CliError::Usage("--k must be at least 1".into()));
    }
    let bundle = read_model(model)?;
    let dataset = read_data(data_path)?;
    let predictor = Predictor::new(&bundle);
    let mut w = output(out)?;
    for (i, inst) in dataset.instances.iter().enumerate() {
        let p = predictor
            .predict(inst, k, instance_seed(common.seed, i))
            .map_err(data(data_path))?;
        let line = PredictionLine {
            source: dataset.source(i),
            label: &p.label,
            confidence: p.confidence(),
            votes: p.votes.as_ref(),
        };
        serde_json::to_writer(&mut w, &line).map_err(|e| CliError::Data(e.to_string()))?;
        writeln!(w).map_err(io_err(out))?;
    }
    w.flush().map_err(io_err(out))
}

#[allow(clippy::too_many_arguments)]
fn cmd_evaluate(
    model: &Path,
    data_path: &Path,
    split: Option<&Path>,
    k: usize,
    out: Option<&Path>,
    per_class: Option<&Path>,
    common: &Common,
) -> Res {
    if k == 0 {
        return Err(CliError::Usage("--k must be at least 1".into()));
    }
    let bundle = read_model(model)?;
    let dataset = read_data(data_path)?;
    let test: Vec<usize> = match split {
        Some(p) => read_split(p, dataset.len())?.test().to_vec(),
        None => (0..dataset.len()).collect(),
    };
    let opts = EvaluateOptions {
        k,
        seed: common.seed,
        ..Default::default()
    };
    let report = evaluate(&bundle, &dataset, &test, &opts, Some(model)).map_err(data(data_path))?;
    let mut w = output(out)?;
    serde_json::to_writer_pretty(&mut w, &report).map_err(|e| CliError::Data(e.to_string()))?;
    writeln!(w).map_err(io_err(out))?;
    w.flush().map_err(io_err(out))?;
    if let Some(p) = per_class {
        std::fs::write(p, report.per_class_csv()).map_err(io_err(Some(p)))?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_augment(
    data_path: &Path,
    mode: Mode,
    samples: usize,
    slots: usize,
    fill: Fill,
    out: Option<&Path>,
    common: &Common,
) -> Res {
    if !(1..=MAX_SLOTS).contains(&slots) {
        return Err(CliError::Usage(format!("--slots must be in 1..={MAX_SLOTS}")));
    }
    let fill = match fill {
        Fill::Pad => FillMode::Pad,
        Fill::WithReplacement => FillMode::WithReplacement,
    };
    let dataset = read_data(data_path)?;
    let mut w = output(out)?;
    for (i, inst) in dataset.instances.iter().enumerate() {
        let mut r = rng::derive(common.seed, &[stream::AUGMENT, i as u64]);
        for _ in 0..samples {
            let s = match mode {
                Mode::Single => Sample::Single(sample_single(inst, i, &mut r)),
                Mode::Multi => Sample::Multi(sample_multi(inst, i, slots, fill, &mut r)),
            };
            serde_json::to_writer(&mut w, &SampleRecord::from(&s)).map_err(|e| CliError::Data(e.to_string()))?;
            writeln!(w).map_err(io_err(out))?;
        }
    }
    w.flush().map_err(io_err(out))
}

fn cmd_features_dump(data_path: &Path, out: Option<&Path>) -> Res {
    let dataset = read_data(data_path)?;
    let mut w = csv::Writer::from_writer(output(out)?);
    let csv_err = |e: csv::Error| CliError::Data(e.to_string());
    w.write_record(std::iter::once("source").chain(FEATURE_NAMES)).map_err(csv_err)?;
    for (i, inst) in dataset.instances.iter().enumerate() {
        let f = extract_features(&inst.values);
        let row = std::iter::once(dataset.source(i)).chain(f.as_slice().iter().map(|x| x.to_string()));
        w.write_record(row).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(out))
}

fn cmd_explain(model: &Path, format: Format, out: Option<&Path>) -> Res {
    let bundle = read_model(model)?;
    let report = feature_importance(&bundle).map_err(data(model))?;
    let text = match format {
        Format::Table => report.to_string(),
        Format::Csv => report.to_csv(),
    };
    let mut w = output(out)?;
    w.write_all(text.as_bytes()).map_err(io_err(out))?;
    w.flush().map_err(io_err(out))
}

fn cmd_synth(preset: Option<&str>, spec: Option<&Path>, per_class: usize, out: &Path, common: &Common) -> Res {
    let spec = match (preset, spec) {
        (Some(name), _) => SynthSpec::preset_named(name)
            .ok_or_else(|| CliError::Usage(format!("unknown preset {name:?}; use sanity, desk or confusable")))?,
        (None, Some(p)) => {
            let text = std::fs::read_to_string(p).map_err(io_err(Some(p)))?;
            SynthSpec::from_toml(&text).map_err(data(p))?
        }
        (None, None) => return Err(CliError::Usage("one of --preset or --spec is required".into())),
    };
    let corpus = generate_synthetic_corpus(&spec, per_class, common.seed).map_err(data(out))?;
    save_dataset(out, &corpus).map_err(data(out))?;
    eprintln!("wrote {} columns to {}", corpus.len(), out.display());
    Ok(())
}

fn run(cli: Cli) -> Res {
    match &cli.command {
        Command::Train {
            data,
            config,
            out,
            split,
            log,
            common,
        } => cmd_train(data, config.as_deref(), out, split.as_deref(), log.as_deref(), common),
        Command::Predict {
            model,
            data,
            k,
            out,
            common,
        } => cmd_predict(model, data, *k, out.as_deref(), common),
        Command::Evaluate {
            model,
            data,
            split,
            k,
            out,
            per_class,
            common,
        } => cmd_evaluate(model, data, split.as_deref(), *k, out.as_deref(), per_class.as_deref(), common),
        Command::Augment {
            data,
            mode,
            samples,
            slots,
            fill,
            out,
            common,
        } => cmd_augment(data, *mode, *samples, *slots, *fill, out.as_deref(), common),
        Command::Features {
            command: FeaturesCommand::Dump { data, out, .. },
        } => cmd_features_dump(data, out.as_deref()),
        Command::Explain { model, format, out, .. } => cmd_explain(model, *format, out.as_deref()),
        Command::Synth {
            preset,
            spec,
            per_class,
            out,
            common,
        } => cmd_synth(preset.as_deref(), spec.as_deref(), *per_class, out, common),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
