//! `cblip` — train and evaluate connection-biased link prediction models.
//!
//! Three subcommands:
//! - `preprocess`: load a dataset, validate it, and print split statistics
//! - `train`: run the training loop, stream metrics, save the best checkpoint
//! - `eval`: rank held-out triples with a saved checkpoint
//!
//! Exit codes: 0 success, 1 usage/config error, 2 data or runtime error.

mod config;

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cblip_core::checkpoint;
use cblip_core::eval::{
    evaluate_entity_prediction, evaluate_relation_prediction, known_triples, EvalOptions,
};
use cblip_core::kg::{graph_stats, load_inductive_split, load_transductive_dir};
use cblip_core::model::TaskMode;
use cblip_core::train::{train, EpochRecord, TrainData};

use config::{ConfigFileError, RunConfig};

#[derive(Parser)]
#[command(name = "cblip", version, about = "Connection-biased link prediction over knowledge graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a dataset and print per-split statistics as JSON.
    Preprocess {
        /// Inductive layout: directory with train.txt and valid.txt.
        #[arg(long)]
        train_dir: Option<PathBuf>,
        /// Inductive layout: directory with train.txt (fact graph) and test.txt.
        #[arg(long)]
        test_dir: Option<PathBuf>,
        /// Transductive layout: directory with train/valid/test.txt.
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Train a model from a config file (flags override file keys).
    Train {
        /// Flat `key = value` config file.
        #[arg(long)]
        config: PathBuf,
        /// Repeatable override, e.g. --set lr=0.008 --set ablation=vanilla.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        #[arg(long)]
        train_dir: Option<PathBuf>,
        #[arg(long)]
        test_dir: Option<PathBuf>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Shorthand for --set ablation=vanilla.
        #[arg(long)]
        ablation: Option<String>,
    },
    /// Evaluate a checkpoint and print the ranking report as JSON.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        train_dir: Option<PathBuf>,
        #[arg(long)]
        test_dir: Option<PathBuf>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Corruption-draw seed (defaults to the checkpoint's seed).
        #[arg(long)]
        seed: Option<u64>,
        /// Corruptions per query side (defaults to the checkpoint config).
        #[arg(long)]
        negatives: Option<usize>,
        /// Filtered corruption sampling: on|off.
        #[arg(long)]
        eval_filter: Option<String>,
    },
}

enum CliError {
    Usage(String),
    Runtime(Box<dyn std::error::Error>),
}

impl From<ConfigFileError> for CliError {
    fn from(e: ConfigFileError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<cblip_core::train::ConfigError> for CliError {
    fn from(e: cblip_core::train::ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

macro_rules! runtime_from {
    ($($ty:ty),*) => {$(
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Runtime(Box::new(e))
            }
        }
    )*};
}
runtime_from!(
    cblip_core::kg::KgError,
    cblip_core::train::TrainError,
    cblip_core::checkpoint::CheckpointError,
    cblip_core::numerics::TensorError,
    std::io::Error,
    serde_json::Error
);

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successful exits.
            if e.use_stderr() {
                let _ = e.print();
                return ExitCode::from(1);
            }
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(e)) => {
            eprint!("error: {e}");
            let mut source = e.source();
            while let Some(s) = source {
                eprint!(": {s}");
                source = s.source();
            }
            eprintln!();
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Preprocess {
            train_dir,
            test_dir,
            data_dir,
        } => cmd_preprocess(train_dir, test_dir, data_dir),
        Command::Train {
            config,
            sets,
            train_dir,
            test_dir,
            data_dir,
            out_dir,
            seed,
            ablation,
        } => cmd_train(config, sets, train_dir, test_dir, data_dir, out_dir, seed, ablation),
        Command::Eval {
            checkpoint,
            train_dir,
            test_dir,
            data_dir,
            seed,
            negatives,
            eval_filter,
        } => cmd_eval(checkpoint, train_dir, test_dir, data_dir, seed, negatives, eval_filter),
    }
}

fn cmd_preprocess(
    train_dir: Option<PathBuf>,
    test_dir: Option<PathBuf>,
    data_dir: Option<PathBuf>,
) -> Result<(), CliError> {
    match (train_dir, test_dir, data_dir) {
        (Some(train), Some(test), None) => {
            let ds = load_inductive_split(&train, &test)?;
            let summary = serde_json::json!({
                "layout": "inductive",
                "train_graph": graph_stats(&ds.train_graph),
                "valid_triples": ds.valid_triples.len(),
                "test_graph": graph_stats(&ds.test_graph),
                "infer_triples": ds.infer_triples.len(),
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(())
        }
        (None, None, Some(dir)) => {
            let ds = load_transductive_dir(&dir)?;
            let summary = serde_json::json!({
                "layout": "transductive",
                "graph": graph_stats(&ds.graph),
                "valid_triples": ds.valid_triples.len(),
                "test_triples": ds.test_triples.len(),
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(())
        }
        _ => Err(CliError::Usage(
            "pass either --train-dir and --test-dir (inductive) or --data-dir (transductive)"
                .into(),
        )),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    config_path: PathBuf,
    sets: Vec<String>,
    train_dir: Option<PathBuf>,
    test_dir: Option<PathBuf>,
    data_dir: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    seed: Option<u64>,
    ablation: Option<String>,
) -> Result<(), CliError> {
    let text = fs::read_to_string(&config_path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", config_path.display())))?;
    let mut cfg = RunConfig::default();
    cfg.apply_file(&text)?;
    for pair in &sets {
        let Some((key, value)) = pair.split_once('=') else {
            return Err(CliError::Usage(format!("--set expects KEY=VALUE, got `{pair}`")));
        };
        cfg.set(key.trim(), value.trim())?;
    }
    if let Some(dir) = train_dir {
        cfg.paths.train_dir = Some(dir);
    }
    if let Some(dir) = test_dir {
        cfg.paths.test_dir = Some(dir);
    }
    if let Some(dir) = data_dir {
        cfg.paths.data_dir = Some(dir);
    }
    if let Some(dir) = out_dir {
        cfg.paths.out_dir = Some(dir);
    }
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    if let Some(a) = ablation {
        cfg.set("ablation", &a)?;
    }
    cfg.train.validate()?;

    let out = cfg
        .paths
        .out_dir
        .clone()
        .ok_or_else(|| CliError::Usage("out_dir is required (config key or --out-dir)".into()))?;
    fs::create_dir_all(&out)?;

    // Datasets are loaded before any files are written.
    enum Loaded {
        Inductive(cblip_core::kg::InductiveDataset),
        Transductive(cblip_core::kg::TransductiveDataset),
    }
    let loaded = match cfg.train.mode {
        TaskMode::Inductive => {
            let (train, test) = require_inductive_dirs(&cfg)?;
            Loaded::Inductive(load_inductive_split(&train, &test)?)
        }
        TaskMode::Transductive => {
            let dir = cfg.paths.data_dir.clone().ok_or_else(|| {
                CliError::Usage("transductive mode requires data_dir".into())
            })?;
            Loaded::Transductive(load_transductive_dir(&dir)?)
        }
    };

    let metrics_path = out.join("metrics.jsonl");
    let mut metrics = fs::File::create(&metrics_path)?;
    let mut stream = |record: &EpochRecord, seconds: f64| {
        let line = serde_json::to_string(record).expect("record serializes");
        writeln!(metrics, "{line}").expect("metrics stream writable");
        let mut live = record.clone();
        live.seconds = Some(seconds);
        eprintln!("{}", serde_json::to_string(&live).expect("record serializes"));
    };

    let data = match &loaded {
        Loaded::Inductive(ds) => TrainData::Inductive(ds),
        Loaded::Transductive(ds) => TrainData::Transductive(ds),
    };
    let outcome = train::<f32>(&data, &cfg.train, &mut stream)?;

    let ckpt_path = out.join("model.ckpt");
    checkpoint::save(&ckpt_path, &cfg.train, &outcome.model.store)?;

    let summary = serde_json::json!({
        "checkpoint": ckpt_path,
        "metrics": metrics_path,
        "best_epoch": outcome.best_epoch,
        "best_val_mrr": outcome.best_val_mrr,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn require_inductive_dirs(cfg: &RunConfig) -> Result<(PathBuf, PathBuf), CliError> {
    match (&cfg.paths.train_dir, &cfg.paths.test_dir) {
        (Some(train), Some(test)) => Ok((train.clone(), test.clone())),
        _ => Err(CliError::Usage(
            "inductive mode requires train_dir and test_dir".into(),
        )),
    }
}

fn cmd_eval(
    checkpoint_path: PathBuf,
    train_dir: Option<PathBuf>,
    test_dir: Option<PathBuf>,
    data_dir: Option<PathBuf>,
    seed: Option<u64>,
    negatives: Option<usize>,
    eval_filter: Option<String>,
) -> Result<(), CliError> {
    let (cfg, model) = checkpoint::load_model::<f32>(&checkpoint_path)?;
    let filter = match eval_filter.as_deref() {
        None => cfg.eval_filter,
        Some("on") => true,
        Some("off") => false,
        Some(other) => {
            return Err(CliError::Usage(format!(
                "--eval-filter expects on|off, got `{other}`"
            )))
        }
    };
    let opts = EvalOptions {
        negatives: negatives.unwrap_or(cfg.eval_negatives),
        filter,
        cutoffs: vec![1, 3, 10],
        seed: seed.unwrap_or(cfg.seed),
    };

    match cfg.mode {
        TaskMode::Inductive => {
            let (train, test) = match (train_dir, test_dir) {
                (Some(a), Some(b)) => (a, b),
                _ => {
                    return Err(CliError::Usage(
                        "inductive eval requires --train-dir and --test-dir".into(),
                    ))
                }
            };
            let ds = load_inductive_split(&train, &test)?;
            check_vocab(
                "relations",
                ds.test_graph.num_relations(),
                model.num_relations(),
            )?;
            let known = known_triples(&[ds.test_graph.triples(), &ds.infer_triples]);
            let report = evaluate_entity_prediction(
                &model,
                &ds.test_graph,
                &ds.infer_triples,
                &known,
                &opts,
            )?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        TaskMode::Transductive => {
            let dir = data_dir.ok_or_else(|| {
                CliError::Usage("transductive eval requires --data-dir".into())
            })?;
            let ds = load_transductive_dir(&dir)?;
            check_vocab("relations", ds.graph.num_relations(), model.num_relations())?;
            let entity_rows = model
                .tables
                .entity_emb
                .map(|id| model.store.value(id).rows())
                .unwrap_or(0);
            check_vocab("entities", ds.graph.num_entities(), entity_rows)?;
            let report =
                evaluate_relation_prediction(&model, &ds.graph, &ds.test_triples, &[1, 3, 10])?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}

fn check_vocab(what: &str, dataset: usize, model: usize) -> Result<(), CliError> {
    if dataset != model {
        return Err(CliError::Runtime(
            format!("checkpoint/dataset mismatch: dataset has {dataset} {what}, model expects {model}")
                .into(),
        ));
    }
    Ok(())
}
