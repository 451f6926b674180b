//! `burnscar`: synthetic data, preparation, spectral indices, training,
//! inference and evaluation for burned-area delineation.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use burnscar::net::Mode;

#[derive(Debug)]
pub enum CliError {
    /// Bad input data or a failed pipeline stage (exit status 1).
    Domain(String),
    /// Missing or inconsistent options (exit status 2).
    Usage(String),
}

impl From<burnscar::Error> for CliError {
    fn from(e: burnscar::Error) -> Self {
        CliError::Domain(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(name = "burnscar", version, about = "Burned-area delineation from Sentinel-2 scenes")]
struct Cli {
    /// JSON file with option values; flags and environment variables take precedence.
    #[arg(long, global = true, env = "BURNSCAR_CONFIG")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset (scenes, labels and a split manifest).
    Synth(SynthArgs),
    /// Resample, label, mask, pad and split the scenes of a manifest.
    Preprocess(PreprocessArgs),
    /// Compute a spectral index (optionally thresholded) for one scene.
    Index(IndexArgs),
    /// Train a network on the train split, validating on val.
    Train(TrainArgs),
    /// Predict burned-area maps with a checkpoint.
    Infer(InferArgs),
    /// Score a prediction raster, or a checkpoint on a split.
    Eval(EvalArgs),
    /// Train and compare STL and MTL over several seeds.
    Experiment(ExperimentArgs),
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthArgs {
    /// Generator seed.
    #[arg(long, env = "BURNSCAR_SEED")]
    pub seed: Option<u64>,
    /// Number of scenes, split by --train-frac/--val-frac.
    #[arg(long, env = "BURNSCAR_SCENES")]
    pub scenes: Option<usize>,
    /// Explicit train,val,test scene counts (overrides --scenes).
    #[arg(long, env = "BURNSCAR_COUNTS")]
    pub counts: Option<String>,
    #[arg(long, env = "BURNSCAR_HEIGHT")]
    pub height: Option<usize>,
    #[arg(long, env = "BURNSCAR_WIDTH")]
    pub width: Option<usize>,
    #[arg(long, env = "BURNSCAR_TRAIN_FRAC")]
    pub train_frac: Option<f64>,
    #[arg(long, env = "BURNSCAR_VAL_FRAC")]
    pub val_frac: Option<f64>,
    /// Output directory.
    #[arg(long, env = "BURNSCAR_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessArgs {
    #[arg(long, env = "BURNSCAR_MANIFEST")]
    pub manifest: Option<PathBuf>,
    #[arg(long, env = "BURNSCAR_OUT")]
    pub out: Option<PathBuf>,
    #[arg(long, env = "BURNSCAR_WORKERS")]
    pub workers: Option<usize>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndexArgs {
    #[arg(long, env = "BURNSCAR_MANIFEST")]
    pub manifest: Option<PathBuf>,
    /// Scene id within the manifest.
    #[arg(long, env = "BURNSCAR_SCENE")]
    pub scene: Option<String>,
    /// nbr, dnbr, ndvi or bais2.
    #[arg(long, env = "BURNSCAR_INDEX")]
    pub kind: Option<String>,
    /// Output index raster (float32 GeoTIFF).
    #[arg(long, env = "BURNSCAR_OUT")]
    pub out: Option<PathBuf>,
    /// Threshold for --mask-out (default 0.27, the dNBR burn threshold).
    #[arg(long, env = "BURNSCAR_THRESHOLD")]
    pub threshold: Option<f64>,
    /// Optional binary mask raster of pixels above the threshold.
    #[arg(long, env = "BURNSCAR_MASK_OUT")]
    pub mask_out: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOpts {
    /// stl or mtl.
    #[arg(long, env = "BURNSCAR_MODE")]
    pub mode: Option<Mode>,
    /// Weight of the land-cover loss.
    #[arg(long, env = "BURNSCAR_LAMBDA")]
    pub lambda: Option<f64>,
    #[arg(long, env = "BURNSCAR_EPOCHS")]
    pub epochs: Option<usize>,
    #[arg(long, env = "BURNSCAR_BATCH_SIZE")]
    pub batch_size: Option<usize>,
    #[arg(long, env = "BURNSCAR_LR")]
    pub lr: Option<f64>,
    #[arg(long, env = "BURNSCAR_WEIGHT_DECAY")]
    pub weight_decay: Option<f64>,
    #[arg(long, env = "BURNSCAR_SEED")]
    pub seed: Option<u64>,
    /// Comma-separated band names (B01..B12, B8A) or `all`.
    #[arg(long, env = "BURNSCAR_BANDS")]
    pub bands: Option<String>,
    #[arg(long, env = "BURNSCAR_CROP_SIZE")]
    pub crop_size: Option<usize>,
    #[arg(long, env = "BURNSCAR_TILE_SIZE")]
    pub tile_size: Option<usize>,
    #[arg(long, env = "BURNSCAR_STRIDE")]
    pub stride: Option<usize>,
    #[arg(long, env = "BURNSCAR_TAPER")]
    pub taper: Option<f64>,
    /// Worker threads (0: one per core). Results do not depend on it.
    #[arg(long, env = "BURNSCAR_WORKERS")]
    pub workers: Option<usize>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainArgs {
    #[arg(long, env = "BURNSCAR_MANIFEST")]
    pub manifest: Option<PathBuf>,
    #[arg(long, env = "BURNSCAR_OUT")]
    pub out: Option<PathBuf>,
    /// Continue from a `last.ckpt` (its stored options win over the flags, except --epochs).
    #[arg(long, env = "BURNSCAR_RESUME")]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub opts: TrainOpts,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferArgs {
    #[arg(long, env = "BURNSCAR_CHECKPOINT")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, env = "BURNSCAR_MANIFEST")]
    pub manifest: Option<PathBuf>,
    /// Split to predict (default test), unless --scene is given.
    #[arg(long, env = "BURNSCAR_SPLIT")]
    pub split: Option<String>,
    #[arg(long, env = "BURNSCAR_SCENE")]
    pub scene: Option<String>,
    #[arg(long, env = "BURNSCAR_OUT")]
    pub out: Option<PathBuf>,
    #[arg(long, env = "BURNSCAR_TILE_SIZE")]
    pub tile_size: Option<usize>,
    #[arg(long, env = "BURNSCAR_STRIDE")]
    pub stride: Option<usize>,
    #[arg(long, env = "BURNSCAR_TAPER")]
    pub taper: Option<f64>,
    /// Also write the land-cover head's classes (MTL checkpoints only).
    #[arg(long, env = "BURNSCAR_LANDCOVER")]
    pub landcover: Option<bool>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalArgs {
    /// Predicted label raster (uint8).
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Ground-truth label raster (uint8, 255 ignored).
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Optional validity raster (non-zero = evaluated).
    #[arg(long)]
    pub valid: Option<PathBuf>,
    /// Number of classes.
    #[arg(long)]
    pub classes: Option<usize>,
    /// Score a checkpoint on a manifest split instead of a raster pair.
    #[arg(long, env = "BURNSCAR_CHECKPOINT")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, env = "BURNSCAR_MANIFEST")]
    pub manifest: Option<PathBuf>,
    #[arg(long, env = "BURNSCAR_SPLIT")]
    pub split: Option<String>,
    /// Report file (JSON).
    #[arg(long, env = "BURNSCAR_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentArgs {
    #[arg(long, env = "BURNSCAR_MANIFEST")]
    pub manifest: Option<PathBuf>,
    #[arg(long, env = "BURNSCAR_OUT")]
    pub out: Option<PathBuf>,
    /// Comma-separated seeds, run for every mode.
    #[arg(long, env = "BURNSCAR_SEEDS")]
    pub seeds: Option<String>,
    /// Comma-separated modes.
    #[arg(long, env = "BURNSCAR_MODES")]
    pub modes: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    pub opts: TrainOpts,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let cfg = cli.config.as_deref();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a, cfg),
        Command::Preprocess(a) => commands::preprocess(a, cfg),
        Command::Index(a) => commands::index(a, cfg),
        Command::Train(a) => commands::train(a, cfg),
        Command::Infer(a) => commands::infer(a, cfg),
        Command::Eval(a) => commands::eval(a, cfg),
        Command::Experiment(a) => commands::experiment(a, cfg),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Domain(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
    }
}
