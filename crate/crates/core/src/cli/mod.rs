//! Command-line surface: argument definitions, file formats and the
//! command implementations behind the `stable-dyn` binary.
//!
//! Every output file starts with `# key = value` lines that record the
//! command and its fully resolved flags, followed by a CSV column header.
//! Numbers are written in shortest round-trip decimal form.

mod checkpoint;
mod commands;
mod table;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use commands::{
    dynamics_checkpoint, latent_checkpoint, load_dataset, load_dynamics, load_frames, load_latent, run, save_dataset,
    save_frames,
};
pub use table::{numbered, Table};

#[derive(Debug, Parser)]
#[command(
    name = "stable-dyn",
    version,
    about = "Learned dynamics with built-in Lyapunov stability"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate a random nominal network, its stable projection and V on a 2-D grid.
    Randviz(RandvizArgs),
    /// n-link pendulum experiments.
    #[command(subcommand)]
    Pendulum(PendulumCommand),
    /// Latent dynamics on synthetic frame sequences.
    #[command(subcommand)]
    Texture(TextureCommand),
}

#[derive(Debug, Clone, Args)]
pub struct StabilityArgs {
    /// Exponential decay rate enforced on V.
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    /// Weight of the quadratic term in V.
    #[arg(long, default_value_t = 1e-3)]
    pub epsilon: f64,
    /// Width of the quadratic region of the smoothed ReLU.
    #[arg(long, default_value_t = 0.1)]
    pub smooth_d: f64,
}

#[derive(Debug, Args)]
pub struct RandvizArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub stability: StabilityArgs,
    /// Grid points per axis.
    #[arg(long, default_value_t = 41)]
    pub resolution: usize,
    /// The grid covers [-bound, bound]².
    #[arg(long, default_value_t = 2.0)]
    pub bound: f64,
    #[arg(long, value_delimiter = ',', default_values_t = [100, 100])]
    pub fhat_hidden: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [100, 100])]
    pub icnn_hidden: Vec<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum PendulumCommand {
    /// Sample (x, ẋ) pairs from the true pendulum.
    GenData(GenDataArgs),
    /// Fit a stable or naive model to a dataset.
    Train(PendulumTrainArgs),
    /// Roll a trained model out against the true pendulum.
    Eval(PendulumEvalArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 1)]
    pub links: usize,
    #[arg(long, default_value_t = 10_000)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.1)]
    pub damping: f64,
    #[arg(long, default_value_t = std::f64::consts::FRAC_PI_2)]
    pub theta_range: f64,
    #[arg(long, default_value_t = 1.0)]
    pub omega_range: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PendulumTrainArgs {
    /// Dataset written by `pendulum gen-data`.
    #[arg(long)]
    pub data: PathBuf,
    /// `stable` or `naive`.
    #[arg(long, default_value = "stable")]
    pub model: String,
    #[arg(long, value_delimiter = ',', default_values_t = [100, 100])]
    pub fhat_hidden: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [60, 60])]
    pub icnn_hidden: Vec<usize>,
    #[command(flatten)]
    pub stability: StabilityArgs,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Loss history CSV; defaults to the checkpoint path with a `.loss.csv` extension.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PendulumEvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 999)]
    pub horizon: usize,
    #[arg(long, default_value_t = 500)]
    pub ensemble: usize,
    #[arg(long, default_value_t = 0.01)]
    pub dt: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Damping of the reference pendulum; defaults to the training data's.
    #[arg(long)]
    pub damping: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum TextureCommand {
    /// Render synthetic blob sequences.
    Synth(SynthArgs),
    /// Train the autoencoder and latent dynamics jointly.
    Train(TextureTrainArgs),
    /// Roll the latent dynamics out from one frame and decode.
    Generate(GenerateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 20)]
    pub count: usize,
    #[arg(long, default_value_t = 40)]
    pub length: usize,
    #[arg(long, default_value_t = 16)]
    pub size: usize,
    #[arg(long, default_value_t = 0.3)]
    pub omega_x: f64,
    #[arg(long, default_value_t = 0.45)]
    pub omega_y: f64,
    #[arg(long, default_value_t = 0.05)]
    pub zeta: f64,
    #[arg(long, default_value_t = 1.5)]
    pub sigma: f64,
    #[arg(long, default_value_t = 4.0)]
    pub max_offset: f64,
    #[arg(long, default_value_t = 0.5)]
    pub max_speed: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TextureTrainArgs {
    /// Frames written by `texture synth`.
    #[arg(long)]
    pub data: PathBuf,
    /// Use the unconstrained nominal network as latent dynamics.
    #[arg(long)]
    pub naive: bool,
    #[arg(long, default_value_t = 8)]
    pub latent_dim: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [64])]
    pub vae_hidden: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [64, 64])]
    pub fhat_hidden: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [64, 64])]
    pub icnn_hidden: Vec<usize>,
    #[command(flatten)]
    pub stability: StabilityArgs,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    /// Latent update is z + step·f(z).
    #[arg(long, default_value_t = 1.0)]
    pub step: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Frames file holding the seed frame.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub sequence: usize,
    #[arg(long, default_value_t = 0)]
    pub frame: usize,
    #[arg(long, default_value_t = 300)]
    pub steps: usize,
    /// Latent step; defaults to the one used in training.
    #[arg(long)]
    pub step: Option<f64>,
    /// Seed for sampling the quadratic bound of V.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-step latent norm CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Decoded frames as CSV, one row per step.
    #[arg(long)]
    pub frames: Option<PathBuf>,
    /// Directory for one grayscale PGM image per step.
    #[arg(long)]
    pub pgm_dir: Option<PathBuf>,
}
