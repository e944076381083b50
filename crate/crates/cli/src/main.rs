use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod files;

/// Spine straightening, vertebra detection and Genant fracture grading.
#[derive(Parser)]
#[command(name = "vfq", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic spine with annotations and oracle heatmaps.
    Phantom(PhantomArgs),
    /// Decode the centerline and straighten a volume into a sagittal image.
    Straighten(StraightenArgs),
    /// Build detection targets on a sagittal image, optionally with the loss.
    Targets(TargetsArgs),
    /// Detect and grade vertebrae on a sagittal image.
    Score(ScoreArgs),
    /// Compare detections with ground truth.
    Evaluate(EvaluateArgs),
}

/// Pipeline configuration and the flags overriding it.
#[derive(Args, Clone, Default)]
pub struct Overrides {
    /// Pipeline configuration JSON; an earlier output with a "config" field also works.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Working spacing for centerline decoding, mm.
    #[arg(long)]
    pub spacing: Option<f64>,
    /// Straightened spacing and arc-length step, mm.
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long = "objectness-thresh")]
    pub objectness_thresh: Option<f64>,
    #[arg(long = "nms-iou")]
    pub nms_iou: Option<f64>,
    #[arg(long = "mild-cut")]
    pub mild_cut: Option<f64>,
    #[arg(long = "moderate-cut")]
    pub moderate_cut: Option<f64>,
    #[arg(long = "severe-cut")]
    pub severe_cut: Option<f64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    pub output: PathBuf,
}

#[derive(Args)]
pub struct PhantomArgs {
    /// Phantom configuration JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Grid spacing of the oracle heatmaps, mm.
    #[arg(long, default_value_t = 3.0)]
    pub spacing: f64,
    /// Gaussian width of the oracle heatmaps, in heatmap voxels.
    #[arg(long, default_value_t = 2.0)]
    pub heatmap_sigma: f64,
    #[arg(long, default_value = ".")]
    pub output: PathBuf,
}

#[derive(Args)]
pub struct StraightenArgs {
    #[arg(long)]
    pub volume: PathBuf,
    /// Per-slice centerline probability maps (VG1).
    #[arg(long, conflicts_with = "annotations", required_unless_present = "annotations")]
    pub heatmaps: Option<PathBuf>,
    /// Annotated vertebrae (VA1); the centerline is interpolated from them.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    #[command(flatten)]
    pub common: Overrides,
}

#[derive(Args)]
pub struct TargetsArgs {
    #[arg(long)]
    pub sagittal: PathBuf,
    #[arg(long)]
    pub transform: PathBuf,
    #[arg(long)]
    pub annotations: PathBuf,
    /// Evaluate the loss and its gradient for the given prediction maps.
    #[arg(long, requires_all = ["objectness", "regression"])]
    pub loss: bool,
    #[arg(long)]
    pub objectness: Option<PathBuf>,
    #[arg(long)]
    pub regression: Option<PathBuf>,
    /// Factor applied to every Genant weight.
    #[arg(long, default_value_t = 1.0)]
    pub genant_scale: f64,
    #[command(flatten)]
    pub common: Overrides,
}

#[derive(Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub sagittal: PathBuf,
    #[arg(long)]
    pub transform: PathBuf,
    /// Objectness maps (VG1, one plane per anchor slot).
    #[arg(long, requires = "regression", required_unless_present = "annotations")]
    pub objectness: Option<PathBuf>,
    /// Regression maps (VG1, twelve planes per anchor slot).
    #[arg(long, requires = "objectness")]
    pub regression: Option<PathBuf>,
    /// Grade annotated keypoints instead of detections.
    #[arg(long, conflicts_with_all = ["objectness", "regression"])]
    pub annotations: Option<PathBuf>,
    #[command(flatten)]
    pub common: Overrides,
}

#[derive(Args)]
pub struct EvaluateArgs {
    /// Detections JSON, one per case.
    #[arg(long, required = true)]
    pub detections: Vec<PathBuf>,
    /// Ground truth VA1, one per case in the same order.
    #[arg(long, required = true)]
    pub gt: Vec<PathBuf>,
    #[command(flatten)]
    pub common: Overrides,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Phantom(a) => commands::phantom(&a),
        Command::Straighten(a) => commands::straighten(&a),
        Command::Targets(a) => commands::targets(&a),
        Command::Score(a) => commands::score(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
