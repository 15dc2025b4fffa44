use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use varmil::data::{StratifyKey, SynthTask};
use varmil::math::Objective;
use varmil::preprocess::RuleMode;
use varmil::train::{LabelMode, ModelChoice};

#[derive(Parser, Debug)]
#[command(name = "varmil", version, about = "Multiple instance learning on bags of tile features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Cut PNG images into tiles and flag background tiles.
    Preprocess(PreprocessArgs),
    /// Write a synthetic bag dataset with a manifest.
    Synth(SynthArgs),
    /// Contrastive pre-training of a tile encoder.
    Pretrain(PretrainArgs),
    /// Encode tissue tiles into bag files.
    Extract(ExtractArgs),
    /// Patient-level stratified test split and k folds.
    Split(SplitArgs),
    /// Train on a single fold.
    Train(TrainArgs),
    /// Cross-validate over all folds of a split.
    Cv(CvArgs),
    /// Cross-validate every cell of a hyper-parameter grid.
    Gridsearch(GridArgs),
    /// Score a manifest with a trained checkpoint.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    img_dir: PathBuf,
    out: PathBuf,
    #[arg(long, default_value_t = 224)]
    tile_size: u32,
    /// Grayscale level above which a pixel counts as bright.
    #[arg(long, default_value_t = 240)]
    intensity: u8,
    #[arg(long, default_value_t = 15.0)]
    sobel: f64,
    /// A tile is background when more than this fraction of pixels is background-like.
    #[arg(long, default_value_t = 0.5)]
    fraction: f64,
    #[arg(long, value_enum, default_value_t = Rule::RobustOr)]
    rule: Rule,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum Rule {
    RobustOr,
    LiteralAnd,
}

impl From<Rule> for RuleMode {
    fn from(r: Rule) -> Self {
        match r {
            Rule::RobustOr => RuleMode::RobustOr,
            Rule::LiteralAnd => RuleMode::LiteralAnd,
        }
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// `mean_signal` or `variance_signal`.
    task: SynthTask,
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    n_bags: usize,
    /// Tiles per bag as `MIN-MAX` or a single count.
    #[arg(long, default_value = "50-200")]
    tiles: String,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    mean_shift: Option<f64>,
    #[arg(long)]
    variance_ratio: Option<f64>,
    #[arg(long)]
    offset_scale: Option<f64>,
}

#[derive(Args, Debug)]
struct PretrainArgs {
    /// Directory written by `preprocess`.
    tiles: PathBuf,
    /// Receives `encoder.ckpt` and `loss.txt`.
    out: PathBuf,
    /// TOML file with pre-training settings; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    /// Side length of augmented views fed to the encoder.
    #[arg(long)]
    size: Option<u32>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct ExtractArgs {
    encoder: PathBuf,
    tiles: PathBuf,
    out: PathBuf,
    /// CSV with `wsi_id,patient_id,raw_score,label`.
    #[arg(long)]
    slides: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SplitArgs {
    manifest: PathBuf,
    #[arg(long, default_value_t = 0.25)]
    test_frac: f64,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated stratification keys.
    #[arg(long, value_delimiter = ',', default_value = "label")]
    stratify: Vec<StratifyKey>,
    /// Defaults to `split.json` next to the manifest.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

/// Overrides applied on top of the model defaults and `--config`.
#[derive(Args, Debug, Default)]
struct RunArgs {
    /// TOML file with `RunConfig` fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<ModelChoice>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    wd: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    subsample: Option<usize>,
    #[arg(long)]
    pad_to: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// `label`, `median` or `tertile`.
    #[arg(long)]
    labels: Option<LabelMode>,
    /// `one_hot_bce` or `label_output`.
    #[arg(long)]
    objective: Option<Objective>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    manifest: PathBuf,
    split: PathBuf,
    #[command(flatten)]
    run: RunArgs,
    /// Fold of the split to train on.
    #[arg(long, default_value_t = 0)]
    fold: usize,
    #[arg(short, long, default_value = "train_report")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CvArgs {
    manifest: PathBuf,
    split: PathBuf,
    #[command(flatten)]
    run: RunArgs,
    #[arg(short, long, default_value = "cv_report")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GridArgs {
    manifest: PathBuf,
    split: PathBuf,
    /// TOML with `learning_rates`, `weight_decays` and `batch_sizes` lists.
    grid: PathBuf,
    #[command(flatten)]
    run: RunArgs,
    #[arg(short, long, default_value = "grid.csv")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    checkpoint: PathBuf,
    manifest: PathBuf,
    /// Slide scores CSV; printed to stdout when absent.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Preprocess(a) => commands::preprocess(a),
        Command::Synth(a) => commands::synth(a),
        Command::Pretrain(a) => commands::pretrain(a),
        Command::Extract(a) => commands::extract(a),
        Command::Split(a) => commands::split(a),
        Command::Train(a) => commands::train(a),
        Command::Cv(a) => commands::cv(a),
        Command::Gridsearch(a) => commands::gridsearch(a),
        Command::Eval(a) => commands::eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
