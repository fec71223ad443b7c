use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::camgen::CameraParams;
use crate::object_control::Placement;

/// Parses `cx,cy,cz`.
pub fn parse_camera(s: &str) -> Result<CameraParams, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected cx,cy,cz, got {s:?}"));
    }
    let mut v = [0.0; 3];
    for (slot, p) in v.iter_mut().zip(&parts) {
        *slot = p.parse().map_err(|_| format!("{p:?} is not a number"))?;
    }
    CameraParams::new(v[0], v[1], v[2]).map_err(|e| e.to_string())
}

fn parse_placement(s: &str) -> Result<Placement, String> {
    s.parse().map_err(|e: crate::Error| e.to_string())
}

fn parse_stage(s: &str) -> Result<u8, String> {
    match s {
        "1" => Ok(1),
        "2" => Ok(2),
        _ => Err(format!("stage must be 1 or 2, got {s:?}")),
    }
}

#[derive(Debug, Parser)]
#[command(name = "dav", version, about = "Camera and object motion control for a toy video diffusion model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write random stationary-camera clips with captions and boxes.
    Synthdata(SynthdataArgs),
    /// Simulate a camera movement on a clip (or every clip in a directory).
    Augment(AugmentArgs),
    /// Train the base model (stage 1) or the camera modules (stage 2).
    Train(TrainArgs),
    /// Sample a clip for a scene file or reproduce a run manifest.
    Generate(GenerateArgs),
    /// Score flow error and grounding for a directory of runs.
    Evaluate(EvaluateArgs),
    /// Grid modulation strength and cut-off, or amplification placement.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct SynthdataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 512)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Source resolution (square).
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 8)]
    pub frames: usize,
    #[arg(long, default_value_t = 1)]
    pub max_objects: usize,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    /// A `.davvid` clip or a directory of them.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_parser = parse_camera, allow_hyphen_values = true)]
    pub cam: CameraParams,
    #[arg(long)]
    pub out: PathBuf,
    /// Output height; defaults to the input height.
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_parser = parse_stage)]
    pub stage: u8,
    #[arg(long)]
    pub out: PathBuf,
    /// Directory written by `synthdata`; clips are generated in memory if absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Starting checkpoint; required for stage 2.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 3000)]
    pub steps: usize,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of clips to synthesize when `--data` is not given.
    #[arg(long, default_value_t = 512)]
    pub clips: usize,
}

/// Values that override a scene file.
#[derive(Debug, Args, Default, Clone)]
pub struct SceneOverrides {
    #[arg(long, value_parser = parse_camera, allow_hyphen_values = true)]
    pub cam: Option<CameraParams>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub guidance: Option<f64>,
    /// Camera cut-off as a fraction of the timestep range.
    #[arg(long)]
    pub cutoff: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long, value_parser = parse_placement)]
    pub placement: Option<Placement>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
    pub scene: Option<PathBuf>,
    /// Reproduce a previous run exactly.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, required_unless_present = "manifest")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: SceneOverrides,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// A run directory, or a directory of run directories.
    #[arg(long)]
    pub runs: PathBuf,
    /// Where the report goes; defaults to `--runs`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepGrid {
    /// Modulation strength × cut-off.
    LambdaTau,
    /// Encoder / middle / decoder amplification subsets.
    Placement,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Use this scene instead of random single-object scenes.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub scenes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = SweepGrid::LambdaTau)]
    pub grid: SweepGrid,
    #[arg(long, value_delimiter = ',', default_values_t = [5.0, 10.0, 25.0, 50.0])]
    pub lambda: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.80, 0.85, 0.90, 0.95])]
    pub tau: Vec<f64>,
    /// Fixed placement for the lambda-tau grid.
    #[arg(long, value_parser = parse_placement)]
    pub placement: Option<Placement>,
    #[arg(long)]
    pub steps: Option<usize>,
}
