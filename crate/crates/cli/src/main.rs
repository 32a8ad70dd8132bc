use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use kernspace::baselines::BaselineKind;
use kernspace::dataset::{ShapeSet, Split, SynthMode};
use kernspace::features::FeatureKind;
use kernspace::models::ModelKind;

mod commands;
mod config;

use config::{enum_arg, usize_list};

/// Learn, evaluate and preview letter spacing from glyph rasters.
#[derive(Debug, Parser)]
#[command(name = "kernspace", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Flat JSON run configuration; flags override its values.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Maximum worker threads.
    #[arg(long, value_name = "K")]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus with analytic ground truth.
    Synth(SynthArgs),
    /// Pretrain the glyph encoder on category classification.
    PretrainEncoder(PretrainArgs),
    /// Train a pairwise or set-wise spacing model.
    Train(TrainArgs),
    /// Fit a heuristic or statistical baseline.
    FitBaseline(FitBaselineArgs),
    /// Predict a kerning table for one font directory.
    Kern(KernArgs),
    /// Score methods on a corpus split and write a report directory.
    Eval(EvalArgs),
    /// Render a word as a binary PGM.
    Render(RenderArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    /// Output corpus directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_categories: Option<usize>,
    /// Glyph raster size (32, 64 or 128).
    #[arg(long)]
    image_size: Option<usize>,
    #[arg(long)]
    train_fonts: Option<usize>,
    #[arg(long)]
    val_fonts: Option<usize>,
    #[arg(long)]
    test_fonts: Option<usize>,
    /// Ground-truth mode: a or b.
    #[arg(long, value_parser = enum_arg::<SynthMode>)]
    mode: Option<SynthMode>,
    /// Glyph shape family: standard or bars.
    #[arg(long, value_parser = enum_arg::<ShapeSet>)]
    shapes: Option<ShapeSet>,
}

#[derive(Debug, Args)]
struct PretrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Output encoder checkpoint.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    feature_dim: Option<usize>,
    /// Convolution widths per stage, comma separated.
    #[arg(long, value_parser = usize_list)]
    channels: Option<Vec<usize>>,
    #[arg(long)]
    pretrain_lr: Option<f64>,
    #[arg(long)]
    pretrain_batch_size: Option<usize>,
    #[arg(long)]
    pretrain_max_epochs: Option<usize>,
    #[arg(long)]
    pretrain_patience: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// pairwise or setwise.
    #[arg(long, value_parser = enum_arg::<ModelKind>)]
    model: Option<ModelKind>,
    /// encoder or peripheral.
    #[arg(long, value_parser = enum_arg::<FeatureKind>)]
    features: Option<FeatureKind>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Frozen encoder checkpoint, required with --features encoder.
    #[arg(long)]
    encoder: Option<PathBuf>,
    /// Output model checkpoint; the epoch log goes to <out>.log.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Defaults to 1e-4 for pairwise and 1e-3 for setwise.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Stop after this many optimizer updates.
    #[arg(long)]
    max_steps: Option<u64>,
    /// Hidden widths of the pairwise MLP, comma separated.
    #[arg(long, value_parser = usize_list)]
    pairwise_hidden: Option<Vec<usize>>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    ffn_hidden: Option<usize>,
    #[arg(long)]
    max_tokens: Option<usize>,
}

#[derive(Debug, Args)]
struct FitBaselineArgs {
    #[command(flatten)]
    common: Common,
    /// monospace, average or optical.
    #[arg(long, value_parser = enum_arg::<BaselineKind>)]
    kind: BaselineKind,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Output baseline artifact (JSON).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct KernArgs {
    #[command(flatten)]
    common: Common,
    /// Trained model checkpoint.
    #[arg(long, value_name = "CKPT")]
    model: PathBuf,
    /// Font directory with glyphs/<label>.pgm.
    #[arg(long)]
    font_dir: PathBuf,
    /// Output kerning table.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Comma-separated name=artifact list; the artifact `gt` scores the ground truth itself.
    #[arg(long, value_name = "NAME=ARTIFACT,...")]
    methods: String,
    /// Corpus split to score: train, val or test.
    #[arg(long, default_value = "test", value_parser = split_arg)]
    split: Split,
    /// Output report directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RenderArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    font_dir: PathBuf,
    /// Letters by category label.
    #[arg(long)]
    word: String,
    /// `gt` for the font's own table, or a kerning.json path.
    #[arg(long, value_name = "gt|FILE")]
    spaces: String,
    /// Second spacing source drawn under the first; per-gap errors go to <out>.gaps.csv.
    #[arg(long, value_name = "gt|FILE")]
    compare: Option<String>,
    /// Output PGM image.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[command(flatten)]
    common: Common,
    /// pairwise or setwise.
    #[arg(long, value_parser = enum_arg::<ModelKind>)]
    model: ModelKind,
    /// Run the small fixed-size check (the only size supported).
    #[arg(long)]
    tiny: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn split_arg(s: &str) -> Result<Split, String> {
    match s.to_lowercase().as_str() {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        _ => Err(format!("unrecognized split {s:?}")),
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    fn code(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Validation(_) => "validation",
            CliError::Runtime(_) => "runtime",
        }
    }
}

impl From<kernspace::Error> for CliError {
    fn from(e: kernspace::Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

macro_rules! via_core_error {
    ($($t:ty),+) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                kernspace::Error::from(e).into()
            }
        })+
    };
}

via_core_error!(
    kernspace::dataset::DatasetError,
    kernspace::features::FeatureError,
    kernspace::baselines::BaselineError,
    kernspace::training::TrainingError,
    kernspace::eval::EvalError,
    kernspace::render::RenderError
);

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.to_string();
            let first = message.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("usage: {first}");
            return ExitCode::from(1);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}: {}", e.code(), e.to_string().replace('\n', " "));
            ExitCode::from(e.exit_code())
        }
    }
}
