//! `resmatch` command line: training, evaluation, data generation, splits,
//! augmentation previews and ratio/seed sweeps.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use resmatch::checkpoint::Checkpoint;
use resmatch::config::{TrainMode, TrainerConfig};
use resmatch::data::{make_split, make_synthetic, DatasetManifest, SemiSplit, SplitTag, SyntheticSpec};
use resmatch::preview::write_preview;
use resmatch::trainer::{evaluate, prepare_eval_sample, run_experiment, run_sweep};
use tempfile::TempDir;

#[derive(Parser, Debug)]
#[command(
    name = "resmatch",
    version,
    about = "Semi-supervised referring expression segmentation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one configuration on one labeled/unlabeled split.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split of a dataset.
    Eval(EvalArgs),
    /// Generate a synthetic shapes dataset.
    GenData(GenDataArgs),
    /// Draw a labeled/unlabeled partition of the train split.
    MakeSplit(MakeSplitArgs),
    /// Dump weak/strong augmentations and text candidates for a few samples.
    PreviewAug(PreviewArgs),
    /// Train once per (ratio, seed) pair and tabulate val oIoU.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
struct DataSource {
    /// Dataset directory holding manifest.jsonl and images/.
    #[arg(long, conflicts_with = "synthetic")]
    dataset: Option<PathBuf>,
    /// Generate N train and N/4 val synthetic samples in a temporary directory.
    #[arg(long, value_name = "N")]
    synthetic: Option<usize>,
    /// Side length of generated synthetic images.
    #[arg(long, default_value_t = 64)]
    synthetic_size: usize,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// TOML trainer config; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    data: DataSource,
    /// Training mode; overrides the config.
    #[arg(long)]
    mode: Option<TrainMode>,
    /// Number of epochs; overrides the config.
    #[arg(long)]
    epochs: Option<usize>,
    /// Root seed; overrides the config and seeds the split and synthetic data.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, env = "RESMATCH_OUT", default_value = "runs")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Split file from make-split; drawn from --ratio and the seed when omitted.
    #[arg(long)]
    split: Option<PathBuf>,
    /// Labeled fraction used when no --split is given.
    #[arg(long, default_value_t = 0.1)]
    ratio: f64,
    /// Continue from last.ckpt in the output directory if present.
    #[arg(long)]
    resume: bool,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Comma-separated labeled fractions.
    #[arg(long, default_value = "0.1")]
    ratios: String,
    /// Comma-separated seeds.
    #[arg(long, default_value = "1,2,3")]
    seeds: String,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Checkpoint file written by train.
    #[arg(long)]
    checkpoint: PathBuf,
    /// TOML trainer config; only image_size is used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    data: DataSource,
    /// Split to evaluate: val, testA, testB or train.
    #[arg(long = "split-tag", default_value = "val")]
    split_tag: SplitTag,
    /// Seed for synthetic data.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct GenDataArgs {
    /// Number of train samples.
    #[arg(long, default_value_t = 512)]
    n: usize,
    /// Number of val samples (defaults to n/4).
    #[arg(long)]
    val: Option<usize>,
    /// Image side length in pixels.
    #[arg(long, default_value_t = 64)]
    image_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output dataset directory.
    #[arg(long, env = "RESMATCH_OUT", default_value = "data")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct MakeSplitArgs {
    /// Dataset directory holding manifest.jsonl.
    #[arg(long)]
    dataset: PathBuf,
    /// Labeled fraction in (0, 1].
    #[arg(long, default_value_t = 0.1)]
    ratio: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output split file.
    #[arg(long, default_value = "split.json")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PreviewArgs {
    /// TOML trainer config supplying profile, image size and text settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    data: DataSource,
    /// Number of samples to preview.
    #[arg(long, default_value_t = 4)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, env = "RESMATCH_OUT", default_value = "preview")]
    out: PathBuf,
}

/// Misuse detected after clap parsing; exits with status 2 like clap errors.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// A loaded dataset plus the temporary directory backing it, if any.
struct Dataset {
    manifest: DatasetManifest,
    _tmp: Option<TempDir>,
}

fn open_dataset(src: &DataSource, seed: u64) -> anyhow::Result<Dataset> {
    match (&src.dataset, src.synthetic) {
        (Some(dir), _) => Ok(Dataset {
            manifest: DatasetManifest::load(dir)?,
            _tmp: None,
        }),
        (None, Some(n)) => {
            if n == 0 {
                return Err(UsageError("--synthetic needs N >= 1".into()).into());
            }
            let tmp = tempfile::tempdir().context("creating temporary dataset directory")?;
            let spec = SyntheticSpec {
                train: n,
                val: n / 4,
                image_size: src.synthetic_size,
                seed,
            };
            let manifest = make_synthetic(tmp.path(), &spec)?;
            log::info!(
                "generated {} synthetic samples in {}",
                manifest.len(),
                tmp.path().display()
            );
            Ok(Dataset {
                manifest,
                _tmp: Some(tmp),
            })
        }
        (None, None) => Err(UsageError("one of --dataset or --synthetic is required".into()).into()),
    }
}

fn load_config(path: Option<&Path>) -> anyhow::Result<TrainerConfig> {
    Ok(match path {
        Some(p) => TrainerConfig::load(p)?,
        None => TrainerConfig::default(),
    })
}

fn run_config(args: &RunArgs) -> anyhow::Result<TrainerConfig> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(mode) = args.mode {
        config.mode = mode;
    }
    if let Some(epochs) = args.epochs {
        config.epochs = epochs;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn parse_list<T: std::str::FromStr>(flag: &str, raw: &str) -> anyhow::Result<Vec<T>> {
    let items: Vec<&str> = raw.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if items.is_empty() {
        return Err(UsageError(format!("--{flag} must list at least one value")).into());
    }
    items
        .iter()
        .map(|s| {
            s.parse::<T>()
                .map_err(|_| UsageError(format!("--{flag}: cannot parse {s:?}")).into())
        })
        .collect()
}

fn cmd_train(args: &TrainArgs) -> anyhow::Result<()> {
    let config = run_config(&args.run)?;
    let data = open_dataset(&args.run.data, config.seed)?;
    let split = match &args.split {
        Some(path) => SemiSplit::load(path)?,
        None => make_split(&data.manifest, args.ratio, config.seed)?,
    };
    let result = run_experiment(&config, &data.manifest, &split, &args.run.out, args.resume)?;
    println!("{}", serde_json::to_string(&result)?);
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> anyhow::Result<()> {
    let ratios: Vec<f64> = parse_list("ratios", &args.ratios)?;
    let seeds: Vec<u64> = parse_list("seeds", &args.seeds)?;
    let config = run_config(&args.run)?;
    let data = open_dataset(&args.run.data, config.seed)?;
    let rows = run_sweep(&config, &data.manifest, &ratios, &seeds, &args.run.out)?;
    for row in rows {
        println!("{}", serde_json::to_string(&row)?);
    }
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> anyhow::Result<()> {
    let config = load_config(args.config.as_deref())?;
    let data = open_dataset(&args.data, args.seed)?;
    let mut model = Checkpoint::load(&args.checkpoint)?.model()?;
    let samples = data
        .manifest
        .load_split(args.split_tag)?
        .iter()
        .map(|s| prepare_eval_sample(s, config.image_size))
        .collect::<resmatch::Result<Vec<_>>>()?;
    let report = evaluate(&mut model, &samples, config.image_size)?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

fn cmd_gen_data(args: &GenDataArgs) -> anyhow::Result<()> {
    let spec = SyntheticSpec {
        train: args.n,
        val: args.val.unwrap_or(args.n / 4),
        image_size: args.image_size,
        seed: args.seed,
    };
    let manifest = make_synthetic(&args.out, &spec)?;
    println!("wrote {} records to {}", manifest.len(), args.out.display());
    Ok(())
}

fn cmd_make_split(args: &MakeSplitArgs) -> anyhow::Result<()> {
    let manifest = DatasetManifest::load(&args.dataset)?;
    let split = make_split(&manifest, args.ratio, args.seed)?;
    split.save(&args.out)?;
    println!(
        "{} labeled, {} unlabeled -> {}",
        split.labeled.len(),
        split.unlabeled.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_preview(args: &PreviewArgs) -> anyhow::Result<()> {
    let config = load_config(args.config.as_deref())?;
    let data = open_dataset(&args.data, args.seed)?;
    let embedder = config.embedder.build()?;
    let files = write_preview(&data.manifest, &config, embedder.as_ref(), args.n, args.seed, &args.out)?;
    println!("wrote {} files to {}", files.len(), args.out.display());
    Ok(())
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::GenData(a) => cmd_gen_data(a),
        Command::MakeSplit(a) => cmd_make_split(a),
        Command::PreviewAug(a) => cmd_preview(a),
        Command::Sweep(a) => cmd_sweep(a),
    }
}

fn error_code(err: &anyhow::Error) -> &'static str {
    err.chain()
        .find_map(|e| e.downcast_ref::<resmatch::Error>().map(resmatch::Error::code))
        .unwrap_or("runtime")
}

/// The error chain joined with ": ", skipping causes a parent already quotes.
fn describe(err: &anyhow::Error) -> String {
    let mut parts: Vec<String> = Vec::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !parts.last().is_some_and(|p| p.contains(&text)) {
            parts.push(text);
        }
    }
    parts.join(": ")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.render().to_string();
            let first = rendered.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("ERROR:usage:{first}");
            eprint!("{rendered}");
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) if err.is::<UsageError>() => {
            eprintln!("ERROR:usage:{err}");
            ExitCode::from(2)
        }
        Err(err) => {
            let message = describe(&err).replace('\n', " ");
            eprintln!("ERROR:{}:{message}", error_code(&err));
            ExitCode::FAILURE
        }
    }
}
