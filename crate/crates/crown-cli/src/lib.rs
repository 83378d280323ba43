//! Command-line front end for the crown-completion toolkit: dataset
//! generation, training, completion, standalone reconstruction,
//! evaluation, gradient checking, and the objective comparison table.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage errors.

pub mod ablate;
pub mod cfgfile;
pub mod complete;
pub mod evalcmd;
pub mod frame;
pub mod gen;
pub mod gradcheck;
pub mod lock;
pub mod recon;
pub mod traincmd;

use std::path::PathBuf;
use std::str::FromStr;

use clap::{Parser, Subcommand, ValueEnum};
use crown_core::Result;

#[derive(Parser, Debug)]
#[command(
    name = "crown",
    version,
    about = "Desk-scale crown completion: synthetic tooth rows, a point completion network,\ndifferentiable surface reconstruction, meshing, and evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic tooth-row dataset
    Gen(GenArgs),
    /// Train the completion network on a generated dataset
    Train(TrainArgs),
    /// Complete a context cloud with a trained model and mesh the result
    Complete(CompleteArgs),
    /// Reconstruct a mesh from an oriented point cloud (no network)
    Recon(ReconArgs),
    /// Compare a prediction against a reference and write a metrics CSV
    Eval(EvalArgs),
    /// Check every hand-written derivative against finite differences
    Gradcheck(GradcheckArgs),
    /// Train objective variants and write a comparison table CSV
    Ablate(AblateArgs),
}

#[derive(clap::Args, Debug)]
pub struct GenArgs {
    /// Output dataset directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Base training samples [default: 64]
    #[arg(long, value_name = "N")]
    pub train: Option<usize>,
    /// Validation samples [default: 16]
    #[arg(long, value_name = "N")]
    pub val: Option<usize>,
    /// Test samples [default: 16]
    #[arg(long, value_name = "N")]
    pub test: Option<usize>,
    /// Generator seed [default: 7]
    #[arg(long, value_name = "S")]
    pub seed: Option<u64>,
    /// Augmented copies added per training sample [default: 10]
    #[arg(long = "aug-factor", value_name = "K")]
    pub aug_factor: Option<usize>,
    /// Delete and regenerate an existing non-empty output directory
    #[arg(long)]
    pub force: bool,
    /// Optional `key = value` file supplying values for omitted flags
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
pub struct TrainArgs {
    /// Dataset directory produced by `gen`
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Output directory for checkpoints and the history CSV
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Training epochs [default: 60]
    #[arg(long, value_name = "E")]
    pub epochs: Option<usize>,
    /// Batch size [default: 8]
    #[arg(long, value_name = "B")]
    pub batch: Option<usize>,
    /// Learning rate [default: 5e-4]
    #[arg(long, value_name = "F")]
    pub lr: Option<f64>,
    /// Drop the reconstruction-grid term from the training objective
    #[arg(long = "no-mse")]
    pub no_mse: bool,
    /// Training seed [default: 7]
    #[arg(long, value_name = "S")]
    pub seed: Option<u64>,
    /// Optional `key = value` file supplying values for omitted flags
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
pub struct CompleteArgs {
    /// Trained model checkpoint
    #[arg(long, value_name = "CKPT")]
    pub model: PathBuf,
    /// Context point cloud (.ply)
    #[arg(long, value_name = "PLY")]
    pub context: PathBuf,
    /// Output mesh path (.obj or .ply)
    #[arg(long = "out-mesh", value_name = "PATH")]
    pub out_mesh: PathBuf,
    /// Also write the predicted oriented points (.ply)
    #[arg(long = "out-points", value_name = "PATH")]
    pub out_points: Option<PathBuf>,
    /// Reconstruction grid resolution [default: 128]
    #[arg(long, value_name = "R")]
    pub resolution: Option<usize>,
    /// Optional `key = value` file supplying values for omitted flags
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
pub struct ReconArgs {
    /// Oriented point cloud (.ply with normals)
    #[arg(long, value_name = "PLY")]
    pub points: PathBuf,
    /// Output mesh path (.obj or .ply)
    #[arg(long = "out-mesh", value_name = "PATH")]
    pub out_mesh: PathBuf,
    /// Grid resolution [default: 128]
    #[arg(long, value_name = "R")]
    pub resolution: Option<usize>,
    /// Smoothing width in grid cells [default: 2]
    #[arg(long, value_name = "F")]
    pub sigma: Option<f64>,
    /// Optional `key = value` file supplying values for omitted flags
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
pub struct EvalArgs {
    /// Predicted mesh or point cloud (.obj/.ply)
    #[arg(long, value_name = "PATH")]
    pub pred: PathBuf,
    /// Reference mesh or point cloud (.obj/.ply)
    #[arg(long, value_name = "PATH")]
    pub gt: PathBuf,
    /// F-score distance threshold [default: 0.3]
    #[arg(long, value_name = "F")]
    pub tau: Option<f64>,
    /// Output CSV path
    #[arg(long, value_name = "CSV")]
    pub out: PathBuf,
    /// Optional `key = value` file supplying values for omitted flags
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
pub struct GradcheckArgs {
    /// Model scale to probe [default: tiny]
    #[arg(long, value_enum, value_name = "SCALE")]
    pub scale: Option<Scale>,
    /// Probe seed [default: 7]
    #[arg(long, value_name = "S")]
    pub seed: Option<u64>,
    /// Test hook: multiply one stage's analytic value by 1.01
    #[arg(long = "corrupt-stage", value_name = "STAGE", hide = true)]
    pub corrupt_stage: Option<String>,
    /// Optional `key = value` file supplying values for omitted flags
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
pub struct AblateArgs {
    /// Dataset directory produced by `gen`
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Output CSV path
    #[arg(long, value_name = "CSV")]
    pub out: PathBuf,
    /// Number of training seeds [default: 3]
    #[arg(long, value_name = "N")]
    pub seeds: Option<usize>,
    /// Optional `key = value` file supplying values for omitted flags
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

/// Network size for the gradient checks.
#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scale {
    /// Smallest architecture that exercises every layer
    Tiny,
    /// The full completion network
    Default,
}

impl FromStr for Scale {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Scale, String> {
        match s {
            "tiny" => Ok(Scale::Tiny),
            "default" => Ok(Scale::Default),
            other => Err(format!("expected `tiny` or `default`, got {other:?}")),
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(args) => gen::cmd_gen(&args),
        Command::Train(args) => traincmd::cmd_train(&args),
        Command::Complete(args) => complete::cmd_complete(&args),
        Command::Recon(args) => recon::cmd_recon(&args),
        Command::Eval(args) => evalcmd::cmd_eval(&args),
        Command::Gradcheck(args) => gradcheck::cmd_gradcheck(&args),
        Command::Ablate(args) => ablate::cmd_ablate(&args),
    }
}
