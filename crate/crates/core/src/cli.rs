//! The `chainlabel` command line: synthetic data, training, prediction,
//! evaluation and embedding inspection.

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::baseline::{baseline_fit, baseline_topk, BaselineLoss};
use crate::checkpoint::Checkpoint;
use crate::data::{load_dataset, read_dataset, synth_generate, Dataset, LabelVocab, SynthConfig};
use crate::decode::{predict_topk, BeamConfig};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, nearest_labels, Annotation};
use crate::model::{Hyper, DEFAULT_EMBED_DIM, DEFAULT_STATE_DIM};
use crate::numerics;
use crate::train::{fit, label_counts, order_labels, TrainConfig};

pub const SEED_ENV: &str = "CHAINLABEL_SEED";
pub const CHECK_PROBS_ENV: &str = "CHAINLABEL_CHECK_PROBS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelDims {
    pub embed_dim: usize,
    pub state_dim: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            embed_dim: DEFAULT_EMBED_DIM,
            state_dim: DEFAULT_STATE_DIM,
        }
    }
}

/// Decoder settings; `min_len` is chosen per invocation of `predict`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamSettings {
    pub beam_width: usize,
    pub top_paths: usize,
    /// Cap on emitted labels; `None` means the vocabulary size.
    pub max_len: Option<usize>,
}

impl Default for BeamSettings {
    fn default() -> Self {
        Self {
            beam_width: 3,
            top_paths: 1,
            max_len: None,
        }
    }
}

/// Everything a config file may set. Flags override file values.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub hyper: ModelDims,
    pub train: TrainConfig,
    pub beam: BeamSettings,
    pub synth: SynthConfig,
}

impl CliConfig {
    /// Reads an optional config file. Sections that leave `seed` unset take it
    /// from `CHAINLABEL_SEED` when that variable is present.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut value = match path {
            Some(p) => serde_json::from_str::<Value>(&fs::read_to_string(p)?)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
            None => Value::Object(Default::default()),
        };
        if !value.is_object() {
            return Err(Error::Config("config file must hold a JSON object".into()));
        }
        if let Ok(raw) = std::env::var(SEED_ENV) {
            let seed: u64 = raw
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={raw:?} is not an unsigned integer")))?;
            for section in ["train", "synth"] {
                let entry = value
                    .as_object_mut()
                    .expect("checked above")
                    .entry(section)
                    .or_insert_with(|| Value::Object(Default::default()));
                if let Some(obj) = entry.as_object_mut() {
                    obj.entry("seed").or_insert(Value::from(seed));
                }
            }
        }
        serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Parser)]
#[command(name = "chainlabel", version, about = "Label-chain multi-label image annotation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with planted label co-occurrence.
    Synth(SynthArgs),
    /// Train a model (and optionally the feature-only baseline).
    Train(TrainArgs),
    /// Decode ranked labels for every example of a dataset.
    Predict(PredictArgs),
    /// Score predictions against ground truth.
    Evaluate(EvaluateArgs),
    /// Nearest labels to a label in the embedding space.
    Nn(NnArgs),
    /// Print the training label order with document frequencies.
    Order(OrderArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fraction of examples written to `--test-out` instead of `--out`.
    #[arg(long, requires = "test_out")]
    pub holdout: Option<f64>,
    #[arg(long)]
    pub test_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Logistic,
    Softmax,
}

impl From<LossArg> for BaselineLoss {
    fn from(value: LossArg) -> Self {
        match value {
            LossArg::Logistic => BaselineLoss::Logistic,
            LossArg::Softmax => BaselineLoss::Softmax,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also train the feature-only baseline and store it in the checkpoint.
    #[arg(long)]
    pub baseline: bool,
    #[arg(long, value_enum, default_value = "logistic")]
    pub baseline_loss: LossArg,
    /// Per-epoch history of the label-chain model as JSON lines.
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub state_dim: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub k: usize,
    /// Minimum labels before END may be chosen; defaults to `k`.
    #[arg(long)]
    pub min_len: Option<usize>,
    #[arg(long)]
    pub beam_width: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Rank with the stored baseline instead of the label chain.
    #[arg(long)]
    pub baseline: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub k: usize,
    #[arg(long = "map-n")]
    pub map_n: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct NnArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub label: String,
    #[arg(long)]
    pub m: usize,
}

#[derive(Debug, Args)]
pub struct OrderArgs {
    #[arg(long)]
    pub data: PathBuf,
}

/// One line of a prediction file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub id: String,
    pub labels: Vec<String>,
    pub log_prob: Option<f64>,
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

fn echo(command: &str, resolved: Value) -> Result<()> {
    let line = serde_json::json!({ "command": command, "resolved": resolved });
    println!("{}", serde_json::to_string(&line)?);
    Ok(())
}

fn write_lines<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for row in rows {
        serde_json::to_writer(&mut w, row)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn run_synth(args: SynthArgs) -> Result<()> {
    let mut cfg = CliConfig::load(args.config.as_deref())?.synth;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    echo(
        "synth",
        serde_json::json!({ "synth": cfg, "holdout": args.holdout, "out": args.out, "test_out": args.test_out }),
    )?;
    let dataset = synth_generate(&cfg)?;
    match (args.holdout, args.test_out) {
        (Some(fraction), Some(test_out)) => {
            let (train, test) = dataset.split(fraction, cfg.seed)?;
            train.save(&args.out)?;
            test.save(&test_out)?;
        }
        _ => dataset.save(&args.out)?,
    }
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<()> {
    let file = CliConfig::load(args.config.as_deref())?;
    let mut dims = file.hyper;
    let mut cfg = file.train;
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.dropout {
        cfg.dropout = v;
    }
    if let Some(v) = args.embed_dim {
        dims.embed_dim = v;
    }
    if let Some(v) = args.state_dim {
        dims.state_dim = v;
    }
    cfg.validate()?;
    let (dataset, vocab) = load_dataset(&args.data)?;
    let hyper = Hyper::new(vocab.len(), dims.embed_dim, dims.state_dim, dataset.feature_dim())?;
    let loss: BaselineLoss = args.baseline_loss.into();
    echo(
        "train",
        serde_json::json!({
            "hyper": hyper,
            "train": cfg,
            "baseline": args.baseline.then_some(loss),
            "data": args.data,
            "out": args.out,
        }),
    )?;

    let outcome = fit(&dataset, &vocab, hyper, &cfg)?;
    if let Some(skipped) = outcome.history.first().map(|r| r.examples_skipped).filter(|&n| n > 0) {
        eprintln!("warning: skipped {skipped} examples with no labels");
    }
    let mut ckpt = Checkpoint::new(vocab.clone(), outcome.order, outcome.params)?;
    if args.baseline {
        ckpt.baseline = Some(baseline_fit(&dataset, &vocab, &cfg, loss)?.params);
    }
    ckpt.save(&args.out)?;
    if let Some(path) = &args.history {
        write_lines(path, &outcome.history)?;
    }
    Ok(())
}

fn run_predict(args: PredictArgs) -> Result<()> {
    let settings = CliConfig::load(args.config.as_deref())?.beam;
    let ckpt = Checkpoint::load(&args.model)?;
    let dataset = read_dataset(fs::File::open(&args.data)?)?;
    let hyper = ckpt.hyper();
    if !dataset.is_empty() && dataset.feature_dim() != hyper.feature_dim {
        return Err(Error::Shape(format!(
            "data has {} features, model expects {}",
            dataset.feature_dim(),
            hyper.feature_dim
        )));
    }
    if args.k == 0 {
        return Err(Error::InvalidArgument("--k must be at least 1".into()));
    }
    let max_len = args.max_len.or(settings.max_len).unwrap_or(hyper.vocab_size);
    let min_len = args.min_len.unwrap_or(args.k).min(max_len);
    let beam_width = args.beam_width.unwrap_or(settings.beam_width);
    let beam = BeamConfig::new(beam_width, min_len, max_len, settings.top_paths.min(beam_width))?;
    echo(
        "predict",
        serde_json::json!({ "k": args.k, "beam": beam, "baseline": args.baseline, "model": args.model, "data": args.data, "out": args.out }),
    )?;

    let records: Vec<PredictionRecord> = if args.baseline {
        let base = ckpt
            .baseline
            .as_ref()
            .ok_or_else(|| Error::Checkpoint("checkpoint has no baseline_params".into()))?;
        dataset
            .examples
            .par_iter()
            .map(|ex| {
                let ids = baseline_topk(&ex.features, base, args.k)?;
                Ok(PredictionRecord {
                    id: ex.id.clone(),
                    labels: names(&ckpt.vocab, &ids)?,
                    log_prob: None,
                })
            })
            .collect::<Result<_>>()?
    } else {
        dataset
            .examples
            .par_iter()
            .map(|ex| {
                let pred = predict_topk(&ex.features, &ckpt.params, args.k, &beam)?;
                Ok(PredictionRecord {
                    id: ex.id.clone(),
                    labels: names(&ckpt.vocab, &pred.labels)?,
                    log_prob: Some(pred.log_prob),
                })
            })
            .collect::<Result<_>>()?
    };
    write_lines(&args.out, &records)
}

fn names(vocab: &LabelVocab, ids: &[usize]) -> Result<Vec<String>> {
    ids.iter().map(|&id| vocab.label(id).map(str::to_string)).collect()
}

fn run_evaluate(args: EvaluateArgs) -> Result<()> {
    echo(
        "evaluate",
        serde_json::json!({ "k": args.k, "N": args.map_n, "pred": args.pred, "truth": args.truth, "out": args.out }),
    )?;
    let (truth_set, vocab) = load_dataset(&args.truth)?;
    let truth: Vec<Annotation> = truth_set
        .examples
        .iter()
        .map(|ex| Annotation {
            id: ex.id.clone(),
            labels: ex.labels.clone(),
        })
        .collect();
    let predictions: Vec<Annotation> = read_predictions(&args.pred)?
        .into_iter()
        .map(|r| Annotation {
            id: r.id,
            labels: r.labels,
        })
        .collect();
    let report = evaluate(&predictions, &truth, vocab.labels(), args.k, args.map_n)?;
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    fs::write(&args.out, text)?;
    Ok(())
}

fn run_nn(args: NnArgs) -> Result<()> {
    echo(
        "nn",
        serde_json::json!({ "model": args.model, "label": args.label, "m": args.m }),
    )?;
    let ckpt = Checkpoint::load(&args.model)?;
    let id = ckpt.vocab.id(&args.label)?;
    let query = ckpt.params.label_embedding.row(id).to_vec();
    for (other, sim) in nearest_labels(&query, &ckpt.params, args.m, &[id])? {
        println!("{}\t{sim:.6}", ckpt.vocab.label(other)?);
    }
    Ok(())
}

fn run_order(args: OrderArgs) -> Result<()> {
    echo("order", serde_json::json!({ "data": args.data }))?;
    let (dataset, vocab): (Dataset, LabelVocab) = load_dataset(&args.data)?;
    let order = order_labels(&dataset, &vocab)?;
    let counts = label_counts(&dataset);
    for &id in order.as_slice() {
        let label = vocab.label(id)?;
        println!("{label}\t{}", counts.get(label).copied().unwrap_or(0));
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => run_synth(a),
        Command::Train(a) => run_train(a),
        Command::Predict(a) => run_predict(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::Nn(a) => run_nn(a),
        Command::Order(a) => run_order(a),
    }
}

/// Parses `args`, runs the command and returns the process exit status.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let checks = std::env::var(CHECK_PROBS_ENV).is_ok_and(|v| v == "1");
    if checks {
        numerics::set_probability_checks(true);
    }
    let status = match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    };
    if checks {
        eprintln!("probability checks: {}", numerics::probability_checks_performed());
    }
    status
}

pub fn main() -> i32 {
    run_from(std::env::args_os())
}
