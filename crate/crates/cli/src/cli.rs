//! Command-line syntax. Every options struct is serializable so that a run
//! manifest can record each resolved value under the option's id.

use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use gradfaith::gradcam::ScoreMode;
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "gradfaith",
    version,
    about = "Grad-CAM explanations and their faithfulness audit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic lung phantom dataset and its stratified split.
    Generate(GenerateArgs),
    /// Build a dataset from a directory of PGM images and a labels manifest.
    Ingest(IngestArgs),
    /// Train one model per seed.
    Train(TrainArgs),
    /// Write Grad-CAM heatmaps and overlays for selected samples.
    Explain(ExplainArgs),
    /// Audit checkpoints on the test split and write the report.
    Evaluate(EvaluateArgs),
    /// Run the gradient, Grad-CAM, metric and format verification suites.
    Verify(VerifyArgs),
    /// Re-run the command recorded in a run manifest.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Generate(_) => "generate",
            Command::Ingest(_) => "ingest",
            Command::Train(_) => "train",
            Command::Explain(_) => "explain",
            Command::Evaluate(_) => "evaluate",
            Command::Verify(_) => "verify",
            Command::Replay(_) => "replay",
        }
    }
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct GenerateArgs {
    /// Dataset file to write; the split file goes next to it.
    #[arg(long)]
    pub out: PathBuf,
    /// Image height and width in pixels.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Samples per class.
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Standard deviation of the additive Gaussian noise.
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    /// Lesion-over-lung intensity contrast.
    #[arg(long, default_value_t = 0.35)]
    pub contrast: f64,
    /// Train, validation and test fractions.
    #[arg(long, value_delimiter = ',', default_values_t = [0.6, 0.2, 0.2])]
    pub ratios: Vec<f64>,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct IngestArgs {
    /// Directory the manifest's file names are relative to.
    #[arg(long)]
    pub dir: PathBuf,
    /// Manifest of `filename,label[,maskfile]` lines.
    #[arg(long)]
    pub labels: PathBuf,
    /// Expected image height and width in pixels.
    #[arg(long)]
    pub size: usize,
    /// Dataset file to write; the split file goes next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [0.6, 0.2, 0.2])]
    pub ratios: Vec<f64>,
    /// Seed of the stratified split.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Split file; defaults to the one written next to the dataset.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Model preset: cnn-a, cnn-b, cnn-dense or tiny-vit.
    #[arg(long, default_value = "cnn-a")]
    pub model: String,
    /// Layer Grad-CAM reads; defaults to the preset's last spatial layer.
    #[arg(long)]
    pub capture: Option<String>,
    /// One independent run per seed.
    #[arg(long, value_delimiter = ',', default_values_t = [0u64])]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    /// Reshuffle the training set every epoch.
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub shuffle: bool,
    /// Output directory for checkpoints and training records.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct ExplainArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Sample ids to explain.
    #[arg(long, value_delimiter = ',', required = true)]
    pub ids: Vec<u64>,
    /// Target class index, or `auto` for the predicted class.
    #[arg(long, default_value = "auto")]
    pub class: String,
    /// Threshold of the binarized heatmap image.
    #[arg(long, default_value_t = 0.5)]
    pub tau: f64,
    #[arg(long, default_value = "logit")]
    pub score_mode: ScoreMode,
    /// Layer Grad-CAM reads; defaults to the checkpoint's capture layer.
    #[arg(long)]
    pub capture: Option<String>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FillArg {
    /// Salient pixels fade to zero.
    Multiplicative,
    /// Salient pixels fade to the dataset's mean intensity.
    Mean,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Split file; defaults to the one written next to the dataset.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Checkpoints to audit; consistency is computed within each preset.
    #[arg(long, value_delimiter = ',', required = true)]
    pub ckpts: Vec<PathBuf>,
    /// Binarization threshold for localization and consistency.
    #[arg(long, default_value_t = 0.5)]
    pub tau: f64,
    /// Class score Grad-CAM differentiates.
    #[arg(long, default_value = "logit")]
    pub score_mode: ScoreMode,
    /// Class score whose drop measures faithfulness.
    #[arg(long, default_value = "probability")]
    pub faith_mode: ScoreMode,
    #[arg(long, value_enum, default_value_t = FillArg::Multiplicative)]
    pub fill: FillArg,
    /// Position of the reference run within each preset group.
    #[arg(long = "ref", default_value_t = 0)]
    pub reference: usize,
    /// Layer Grad-CAM reads; defaults to each checkpoint's capture layer.
    #[arg(long)]
    pub capture: Option<String>,
    /// Report CSV.
    #[arg(long, default_value = "report.csv")]
    pub out: PathBuf,
    /// JSON mirror of the report; defaults to the CSV path with a .json extension.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct VerifyArgs {
    /// Run only these suites.
    #[arg(long, value_delimiter = ',')]
    pub suite: Vec<String>,
    /// Where to write the run manifest.
    #[arg(long, default_value = "verify.manifest")]
    pub manifest: PathBuf,
    /// Corrupt one operator's backward rule to exercise the failure path.
    #[arg(long, hide = true)]
    pub inject_fault: Option<String>,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct ReplayArgs {
    /// A manifest written by an earlier run.
    pub manifest: PathBuf,
}
