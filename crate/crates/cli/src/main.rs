//! `oswatch`: open-set watchlist experiments on precomputed embedding files.
//!
//! Subcommands cover the whole pipeline: `synth` generates a synthetic
//! open-set benchmark, `train` fits the adapter network under a chosen loss,
//! `enroll` builds identity templates, `score` emits the probe-by-gallery
//! cosine matrix, `eval` computes the open-set ROC curve and TPIR@FPIR table,
//! and `hist` reports feature-magnitude histograms.
//!
//! Exit codes: 0 success, 2 usage, 3 data/format, 4 numeric, 5 I/O.

mod config;

use clap::{Args, Parser, Subcommand};
use config::ExperimentConfig;
use oswatch::data::{
    read_embeddings, synth_openset, write_embeddings, Dataset, FileFormat, LabelGroup, SynthConfig,
};
use oswatch::gallery::{enroll, score_probes, Extractor, Gallery, ScoreMatrix};
use oswatch::losses::{LossSpec, LossVariant};
use oswatch::metrics::{
    curve_to_csv, histogram_to_csv, magnitude_histogram, oroc_curve, table_to_csv, tpir_at_fpir,
};
use oswatch::net::{load_model, save_model, AdapterParams};
use oswatch::trainer::{train, TrainConfig};
use oswatch::{Error, ErrorClass, Result};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "oswatch", version, about = "Open-set watchlist recognition on embedding files")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic open-set benchmark (train/val/probe splits)
    Synth(SynthArgs),
    /// Train the adapter network on an embedding file
    Train(TrainArgs),
    /// Build identity templates from a model and an enrollment file
    Enroll(EnrollArgs),
    /// Score probe embeddings against an enrolled gallery
    Score(ScoreArgs),
    /// Compute the open-set ROC curve and TPIR@FPIR table from a score matrix
    Eval(EvalArgs),
    /// Histogram feature magnitudes per label group
    Hist(HistArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Generator seed; the whole benchmark is a pure function of it
    #[arg(long)]
    seed: u64,
    /// Number of enrolled (known) identities
    #[arg(long)]
    known: usize,
    /// Samples per class
    #[arg(long)]
    per_class: usize,
    /// Embedding dimension
    #[arg(long)]
    dim: usize,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 4)]
    negative_classes: usize,
    #[arg(long, default_value_t = 4)]
    unknown_classes: usize,
    #[arg(long, default_value_t = 1.0)]
    spread: f64,
    /// Output format: binary or csv
    #[arg(long, default_value = "binary")]
    format: String,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON configuration file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// softmax | garbage | entropic | objectosphere | maxentropy
    #[arg(long)]
    loss: Option<String>,
    /// Soft margin m (maxentropy)
    #[arg(long)]
    margin: Option<f64>,
    /// Target feature magnitude xi (objectosphere)
    #[arg(long)]
    xi: Option<f64>,
    /// Magnitude penalty weight lambda (objectosphere)
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// First hidden layer width
    #[arg(long)]
    h1: Option<usize>,
    /// Second hidden layer width (the compact feature)
    #[arg(long)]
    h2: Option<usize>,
    #[arg(long)]
    val_every: Option<usize>,
}

#[derive(Args)]
struct EnrollArgs {
    /// JSON configuration file; its "gallery" path and "out-dir" fill in
    /// missing flags
    #[arg(long)]
    config: Option<PathBuf>,
    /// Trained model file; omit with --baseline
    #[arg(long)]
    model: Option<PathBuf>,
    /// Skip the adapter and use the raw input embeddings
    #[arg(long)]
    baseline: bool,
    /// Enrollment embedding file (known records; negatives too for garbage models)
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output gallery file (OSEF binary)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    /// JSON configuration file; its "probe" path and "out-dir" fill in
    /// missing flags
    #[arg(long)]
    config: Option<PathBuf>,
    /// Trained model file; omit with --baseline
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    baseline: bool,
    /// Enrolled gallery file produced by `enroll`
    #[arg(long)]
    gallery: Option<PathBuf>,
    /// Probe embedding file
    #[arg(long)]
    probe: Option<PathBuf>,
    /// Output score matrix CSV
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Score matrix CSV produced by `score`
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct HistArgs {
    /// Trained model file; omit with --baseline
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    baseline: bool,
    /// Embedding file to featurize
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 10)]
    bins: usize,
    /// Output histogram CSV
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e}");
        let code = match e.class() {
            ErrorClass::Usage => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numeric => 4,
            ErrorClass::Io => 5,
        };
        std::process::exit(code);
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Enroll(args) => cmd_enroll(args),
        Command::Score(args) => cmd_score(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Hist(args) => cmd_hist(args),
    }
}

fn parse_format(name: &str) -> Result<FileFormat> {
    match name {
        "binary" => Ok(FileFormat::Binary),
        "csv" => Ok(FileFormat::Csv),
        other => Err(Error::Config(format!(
            "unknown format {other:?}; expected binary or csv"
        ))),
    }
}

/// Embedding files are CSV when the extension says so, binary otherwise.
fn format_of(path: &Path) -> FileFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => FileFormat::Csv,
        _ => FileFormat::Binary,
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let format = parse_format(&args.format)?;
    let cfg = SynthConfig {
        seed: args.seed,
        num_known: args.known,
        per_class: args.per_class,
        dim: args.dim,
        negative_classes: args.negative_classes,
        unknown_classes: args.unknown_classes,
        spread: args.spread,
    };
    let (train_set, val_set, probe_set) = synth_openset(&cfg)?;
    ensure_dir(&args.out_dir)?;
    let ext = if format == FileFormat::Csv { "csv" } else { "osef" };
    for (name, ds) in [("train", &train_set), ("val", &val_set), ("probe", &probe_set)] {
        let path = args.out_dir.join(format!("{name}.{ext}"));
        write_embeddings(ds, &path, format)?;
        println!(
            "{}: {} records (dim {}, {} known ids, {} known / {} negative / {} unknown samples)",
            path.display(),
            ds.len(),
            ds.dim,
            ds.num_known,
            ds.count_group(LabelGroup::Known),
            ds.count_group(LabelGroup::Negative),
            ds.count_group(LabelGroup::Unknown),
        );
    }
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let file = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let loss_name = args
        .loss
        .or(file.loss)
        .ok_or_else(|| Error::Config("no loss selected: pass --loss or set \"loss\" in the config".into()))?;
    let mut loss = LossSpec::new(LossVariant::parse(&loss_name)?);
    if let Some(m) = args.margin.or(file.margin) {
        loss.margin = m;
    }
    if let Some(xi) = args.xi.or(file.xi) {
        loss.xi = xi;
    }
    if let Some(lambda) = args.lambda.or(file.lambda) {
        loss.lambda = lambda;
    }
    let mut config = TrainConfig::new(loss);
    if let Some(v) = args.epochs.or(file.epochs) {
        config.epochs = v;
    }
    if let Some(v) = args.batch_size.or(file.batch_size) {
        config.batch_size = v;
    }
    if let Some(v) = args.learning_rate.or(file.learning_rate) {
        config.learning_rate = v;
    }
    if let Some(v) = args.momentum.or(file.momentum) {
        config.momentum = v;
    }
    if let Some(v) = args.seed.or(file.seed) {
        config.seed = v;
    }
    if let Some(v) = args.h1.or(file.h1) {
        config.hidden1 = v;
    }
    if let Some(v) = args.h2.or(file.h2) {
        config.hidden2 = v;
    }
    if let Some(v) = args.val_every.or(file.val_every) {
        config.val_every = v;
    }
    let train_path = args
        .train
        .or(file.train)
        .ok_or_else(|| Error::Config("no training file: pass --train or set \"train\"".into()))?;
    let val_path = args
        .val
        .or(file.val)
        .ok_or_else(|| Error::Config("no validation file: pass --val or set \"val\"".into()))?;
    let out_dir = args
        .out_dir
        .or(file.out_dir)
        .ok_or_else(|| Error::Config("no output directory: pass --out-dir or set \"out-dir\"".into()))?;

    let train_set = read_embeddings(&train_path, format_of(&train_path))?;
    let val_set = read_embeddings(&val_path, format_of(&val_path))?;
    let (params, history) = train(&train_set, &val_set, &config)?;
    ensure_dir(&out_dir)?;
    let model_path = out_dir.join("model.osam");
    save_model(&params, &config.loss, &model_path)?;
    let history_path = out_dir.join("history.csv");
    write_text(&history_path, &history.to_csv())?;
    let last = history.epochs.last().expect("epochs >= 1");
    println!(
        "trained {} for {} epochs: final train_loss {:.6}, val_loss {:.6}, val_acc {:.4}",
        config.loss.variant, config.epochs, last.train_loss, last.val_loss, last.val_known_accuracy
    );
    println!("model: {}", model_path.display());
    println!("history: {}", history_path.display());
    Ok(())
}

/// Loads the model named by `--model`, or none in baseline mode.
fn load_extractor_source(
    model: &Option<PathBuf>,
    baseline: bool,
) -> Result<Option<(AdapterParams, LossSpec)>> {
    match (model, baseline) {
        (Some(_), true) => Err(Error::Config(
            "--model and --baseline are mutually exclusive".into(),
        )),
        (None, true) => Ok(None),
        (Some(path), false) => Ok(Some(load_model(path)?)),
        (None, false) => Err(Error::Config("pass --model or --baseline".into())),
    }
}

fn check_input_dim(params: &AdapterParams, data: &Dataset, what: &str) -> Result<()> {
    if params.input_dim != data.dim {
        return Err(Error::Data(format!(
            "dimension mismatch: the model expects input dimension {} but the {what} file has dimension {}",
            params.input_dim, data.dim
        )));
    }
    Ok(())
}

fn load_optional_config(path: &Option<PathBuf>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn require(path: Option<PathBuf>, what: &str, flag: &str, key: &str) -> Result<PathBuf> {
    path.ok_or_else(|| Error::Config(format!("no {what}: pass {flag} or set \"{key}\" in the config")))
}

fn cmd_enroll(args: EnrollArgs) -> Result<()> {
    let file = load_optional_config(&args.config)?;
    let data_path = require(args.data.or(file.gallery), "enrollment file", "--data", "gallery")?;
    let out_path = match args.out {
        Some(p) => p,
        None => {
            let dir = require(file.out_dir.clone(), "output file", "--out", "out-dir")?;
            dir.join("gallery.osef")
        }
    };
    let model = args.model.or_else(|| {
        (!args.baseline)
            .then(|| file.out_dir.as_ref().map(|d| d.join("model.osam")))
            .flatten()
            .filter(|p| args.config.is_some() && p.exists())
    });
    let data = read_embeddings(&data_path, format_of(&data_path))?;
    let source = load_extractor_source(&model, args.baseline)?;
    let with_garbage = matches!(&source, Some((_, loss)) if loss.variant == LossVariant::Garbage);
    // Negatives are training-time data; unless this model keeps a garbage
    // template, enrollment is defined over the known identities only.
    let data = if with_garbage {
        data
    } else {
        let negatives = data.count_group(LabelGroup::Negative);
        if negatives > 0 {
            println!("dropping {negatives} negative records (no garbage template requested)");
            Dataset::new(
                data.dim,
                data.records.into_iter().filter(|r| r.label != oswatch::data::ClassLabel::Negative).collect(),
            )?
        } else {
            data
        }
    };
    let gallery = match &source {
        Some((params, loss)) => {
            check_input_dim(params, &data, "enrollment")?;
            let with_garbage = loss.variant == LossVariant::Garbage;
            enroll(&Extractor::Adapter(params), &data, with_garbage)?
        }
        None => enroll(&Extractor::Baseline, &data, false)?,
    };
    gallery.save(&out_path)?;
    println!(
        "enrolled {} identities{} into {}",
        gallery.num_known(),
        if gallery.has_garbage() { " plus a garbage template" } else { "" },
        out_path.display()
    );
    Ok(())
}

fn cmd_score(args: ScoreArgs) -> Result<()> {
    let file = load_optional_config(&args.config)?;
    let gallery_path = match args.gallery {
        Some(p) => p,
        None => {
            let dir = require(file.out_dir.clone(), "gallery file", "--gallery", "out-dir")?;
            dir.join("gallery.osef")
        }
    };
    let probe_path = require(args.probe.or(file.probe), "probe file", "--probe", "probe")?;
    let out_path = match args.out {
        Some(p) => p,
        None => {
            let dir = require(file.out_dir.clone(), "output file", "--out", "out-dir")?;
            dir.join("scores.csv")
        }
    };
    let model = args.model.or_else(|| {
        (!args.baseline)
            .then(|| file.out_dir.as_ref().map(|d| d.join("model.osam")))
            .flatten()
            .filter(|p| args.config.is_some() && p.exists())
    });
    let gallery = Gallery::load(&gallery_path)?;
    let probe_set = read_embeddings(&probe_path, format_of(&probe_path))?;
    let source = load_extractor_source(&model, args.baseline)?;
    let probes = match &source {
        Some((params, _)) => {
            check_input_dim(params, &probe_set, "probe")?;
            if params.hidden2 != gallery.feature_dim() {
                return Err(Error::Data(format!(
                    "dimension mismatch: the model emits {}-dimensional features but the gallery holds {}-dimensional templates",
                    params.hidden2,
                    gallery.feature_dim()
                )));
            }
            Extractor::Adapter(params).extract_all(&probe_set)
        }
        None => {
            if probe_set.dim != gallery.feature_dim() {
                return Err(Error::Data(format!(
                    "dimension mismatch: probe embeddings have dimension {} but the gallery holds {}-dimensional templates",
                    probe_set.dim,
                    gallery.feature_dim()
                )));
            }
            Extractor::Baseline.extract_all(&probe_set)
        }
    };
    let matrix = score_probes(&gallery, &probes)?;
    let diag = matrix.diagnostics();
    write_text(&out_path, &matrix.to_csv())?;
    println!(
        "scored {} probes against {} identities ({} degenerate rows, {} tied known rows): {}",
        matrix.rows.len(),
        matrix.num_known,
        diag.degenerate_rows,
        diag.tied_known_rows,
        out_path.display()
    );
    Ok(())
}

const FPIR_TARGETS: [f64; 4] = [1.0, 1e-1, 1e-2, 1e-3];

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let name = args.scores.display().to_string();
    let text = std::fs::read_to_string(&args.scores).map_err(|e| Error::io(&name, e))?;
    let matrix = ScoreMatrix::from_csv(&text, &name)?;
    let curve = oroc_curve(&matrix)?;
    let table = tpir_at_fpir(&curve, &FPIR_TARGETS);
    ensure_dir(&args.out_dir)?;
    let curve_path = args.out_dir.join("oroc.csv");
    write_text(&curve_path, &curve_to_csv(&curve))?;
    let table_path = args.out_dir.join("tpir_at_fpir.csv");
    write_text(&table_path, &table_to_csv(&table))?;
    println!(
        "open-set ROC over {} thresholds ({} known rows, {} unknown rows)",
        curve.points.len(),
        curve.num_known_rows,
        curve.num_unknown_rows
    );
    for (target, value) in &table {
        match value {
            Some(v) => println!("TPIR @ FPIR<={target}: {v:.6}"),
            None => println!("TPIR @ FPIR<={target}: n/a"),
        }
    }
    println!("curve: {}", curve_path.display());
    println!("table: {}", table_path.display());
    Ok(())
}

fn cmd_hist(args: HistArgs) -> Result<()> {
    let data = read_embeddings(&args.data, format_of(&args.data))?;
    let source = load_extractor_source(&args.model, args.baseline)?;
    let features = match &source {
        Some((params, _)) => {
            check_input_dim(params, &data, "data")?;
            Extractor::Adapter(params).extract_all(&data)
        }
        None => Extractor::Baseline.extract_all(&data),
    };
    let hist = magnitude_histogram(&features, args.bins)?;
    write_text(&args.out, &histogram_to_csv(&hist))?;
    for group in &hist.groups {
        println!(
            "{}: {} features, median magnitude {:.6}",
            group.group.name(),
            group.counts.iter().sum::<usize>(),
            group.median
        );
    }
    println!("histogram: {}", args.out.display());
    Ok(())
}
