//! `msk`: toy data, dataset preparation, training, transfer, interpolation,
//! code export and evaluation, and the spectral baseline.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "msk", version, about = "Unpaired motion style transfer")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true, env = "MSK_CONFIG")]
    pub config: Option<PathBuf>,

    /// Seed for every random choice of the command.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Log progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write the procedural toy dataset (BVH files and a manifest).
    ToyData(ToyDataArgs),
    /// Cut manifest clips into windows and split them into train and test.
    DatasetPrepare(PrepareArgs),
    /// Train a model on a prepared window index.
    Train(TrainArgs),
    /// Re-render a content clip in the style of another clip.
    Transfer(TransferArgs),
    /// Transfer with style codes blended between two style clips.
    Interpolate(InterpolateArgs),
    /// Export content, style or AdaIN codes of indexed windows as CSV.
    Embed(EmbedArgs),
    /// Silhouette, linear-probe accuracy and PCA of exported codes.
    EvalCluster(EvalClusterArgs),
    /// Frequency-domain style transfer between equal-length clips.
    BaselineSpectral(SpectralArgs),
}

#[derive(Args, Debug)]
pub struct ToyDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub clips_per_style: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub jitter: Option<f64>,
}

#[derive(Args, Debug)]
pub struct PrepareArgs {
    /// JSON manifest of `{path, style}` entries.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Window index to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Window length in frames (a multiple of 4).
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Window index written by `dataset-prepare`.
    #[arg(long)]
    pub index: PathBuf,
    /// Directory for metrics.csv, config.toml and checkpoints.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Learning rate of both players.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Drop the adversarial and feature-matching terms.
    #[arg(long)]
    pub no_adv: bool,
    /// Drop the triplet term.
    #[arg(long)]
    pub no_triplet: bool,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("style_src").required(true).args(["style", "style_2d"])))]
pub struct TransferArgs {
    /// Checkpoint directory, or a training directory (latest checkpoint).
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub content: PathBuf,
    /// Style clip (BVH).
    #[arg(long)]
    pub style: Option<PathBuf>,
    /// Style keypoints (JSON).
    #[arg(long)]
    pub style_2d: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub no_warp: bool,
    #[arg(long)]
    pub no_ik: bool,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("amount").required(true).args(["weight", "steps"])))]
pub struct InterpolateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub content: PathBuf,
    #[arg(long)]
    pub style_a: PathBuf,
    #[arg(long)]
    pub style_b: PathBuf,
    /// Single blend weight in [0, 1] toward style B.
    #[arg(long)]
    pub weight: Option<f64>,
    /// Evenly spaced weights from 0 to 1.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Output directory; files are `interp_000.bvh`, `interp_001.bvh`, ...
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub no_warp: bool,
    #[arg(long)]
    pub no_ik: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Test,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Content,
    Style,
    Adain,
}

#[derive(Args, Debug)]
pub struct EmbedArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long, value_enum, default_value = "style")]
    pub kind: Kind,
    #[arg(long, value_enum, default_value = "test")]
    pub split: Split,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalClusterArgs {
    /// CSV written by `embed`.
    #[arg(long)]
    pub codes: PathBuf,
    /// Also write 2D PCA coordinates here.
    #[arg(long)]
    pub pca_out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SpectralMode {
    Rotations,
    Positions,
}

#[derive(Args, Debug)]
pub struct SpectralArgs {
    #[arg(long)]
    pub content: PathBuf,
    /// Clip in the content's style.
    #[arg(long)]
    pub style_source: PathBuf,
    /// Clip in the wanted style.
    #[arg(long)]
    pub style_target: PathBuf,
    /// BVH for rotations mode, CSV of joint positions for positions mode.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "rotations")]
    pub mode: SpectralMode,
    /// Cut all three clips to the shortest length.
    #[arg(long)]
    pub crop: bool,
}

/// Error chain joined by `: `, skipping causes already spelled out by their parent.
fn render(e: &anyhow::Error) -> String {
    let mut out = String::new();
    let mut prev = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if prev.contains(&text) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&text);
        prev = text;
    }
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render(&e));
            ExitCode::FAILURE
        }
    }
}
