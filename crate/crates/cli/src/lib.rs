//! Batch command-line pipelines over the `symplectic_ml` library.
//!
//! Every command writes only into its `--out` directory: CSV tables with a
//! `#`-prefixed metadata header and a `metadata.json` describing the run.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use symplectic_ml::models::ModelKind;
use symplectic_ml::PotentialParams;

mod commands;
pub mod config;
pub mod output;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "symplectic-ml", version, about = "Hamiltonian learning pipelines for Henon-Heiles systems")]
pub struct Cli {
    /// Directory that receives every output file.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Master random seed.
    #[arg(long, global = true, env = "SYMPLECTIC_ML_SEED")]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a ground-truth trajectory dataset.
    Generate(GenerateArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Roll a trained model forward and compare against ground truth.
    Predict(PredictArgs),
    /// Infer parameters and hidden coordinates from (q_x, p_x) and predict.
    PredictPartial(PartialArgs),
    /// Energy-error statistics over several rollouts.
    EvalEnergy(EvalArgs),
    /// Maximal Lyapunov exponent over an (alpha, beta) grid.
    Lyapunov(LyapunovArgs),
    /// Poincare section points on q_x = 0, p_x > 0.
    Poincare(PoincareArgs),
    /// Ensemble parameter inference with a trained encoder.
    InferParams(InferArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenerateArgs {
    /// Generation config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Override a config key, e.g. `--set transient=100`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    /// Dataset written by `generate`.
    #[arg(long)]
    pub data: PathBuf,
    /// baseline, hnn, ahnn, asrnn or encoder.
    #[arg(long)]
    pub kind: Option<ModelKind>,
    /// Training config (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, Args, Serialize)]
pub struct SystemArgs {
    #[arg(long, value_parser = config::number)]
    pub alpha: f64,
    /// Defaults to alpha.
    #[arg(long, value_parser = config::number)]
    pub beta: Option<f64>,
    #[arg(long, value_parser = config::number)]
    pub energy: f64,
}

impl SystemArgs {
    pub fn params(&self) -> PotentialParams {
        PotentialParams::new(self.alpha, self.beta.unwrap_or(self.alpha))
    }
}

#[derive(Debug, Clone, Copy, Args, Serialize)]
pub struct StepArgs {
    /// Coarse time step of the rollout.
    #[arg(long, default_value_t = 0.1)]
    pub dt: f64,
    /// Ground-truth integration step.
    #[arg(long, default_value_t = 0.001)]
    pub fine_dt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StateArg(pub [f64; 4]);

fn parse_state(s: &str) -> Result<StateArg, String> {
    config::state(s).map(StateArg)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid(pub Vec<f64>);

fn parse_grid(s: &str) -> Result<Grid, String> {
    config::grid(s).map(Grid)
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub system: SystemArgs,
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    #[command(flatten)]
    pub step: StepArgs,
    /// Initial state `qx,qy,px,py`; sampled on the energy shell otherwise.
    #[arg(long, value_parser = parse_state)]
    pub state: Option<StateArg>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub system: SystemArgs,
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    #[arg(long, default_value_t = 10)]
    pub rollouts: usize,
    /// Secular growth threshold on the second-half/first-half maximum.
    #[arg(long, default_value_t = 1.5)]
    pub growth_factor: f64,
    #[command(flatten)]
    pub step: StepArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PartialArgs {
    /// Encoder checkpoint.
    #[arg(long)]
    pub encoder: PathBuf,
    /// Separable model checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub system: SystemArgs,
    /// Number of observed coarse states.
    #[arg(long, default_value_t = 300)]
    pub observe: usize,
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    #[command(flatten)]
    pub step: StepArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LyapunovArgs {
    /// Alpha values, `start:end:step`.
    #[arg(long, value_parser = parse_grid)]
    pub grid: Grid,
    /// Beta values; defaults to the alpha grid.
    #[arg(long, value_parser = parse_grid)]
    pub beta_grid: Option<Grid>,
    #[arg(long, value_parser = config::number)]
    pub energy: f64,
    /// Integration time per grid point.
    #[arg(long, default_value_t = 1000.0)]
    pub time: f64,
    #[arg(long, default_value_t = 0.01)]
    pub dt: f64,
    /// Time between re-orthonormalizations.
    #[arg(long, default_value_t = 1.0)]
    pub renorm: f64,
    /// Use a learned flow instead of the analytic one.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PoincareArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    #[arg(long, default_value_t = 20)]
    pub orbits: usize,
    #[arg(long, default_value_t = 1000.0)]
    pub time: f64,
    #[arg(long, default_value_t = 0.01)]
    pub dt: f64,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct InferArgs {
    #[arg(long)]
    pub encoder: PathBuf,
    /// Infer on every trajectory of a dataset instead of fresh orbits.
    #[arg(long, conflicts_with_all = ["alpha", "beta", "energy"])]
    pub data: Option<PathBuf>,
    #[arg(long, value_parser = config::number, required_unless_present = "data")]
    pub alpha: Option<f64>,
    #[arg(long, value_parser = config::number)]
    pub beta: Option<f64>,
    #[arg(long, value_parser = config::number, required_unless_present = "data")]
    pub energy: Option<f64>,
    #[arg(long, default_value_t = 5)]
    pub trajectories: usize,
    /// Coarse states per fresh orbit.
    #[arg(long, default_value_t = 1000)]
    pub length: usize,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    #[command(flatten)]
    pub step: StepArgs,
}

/// Parse `argv` and run the command, returning the process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.jobs.unwrap_or(0)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_RUNTIME;
        }
    };
    match pool.install(|| commands::run(&cli)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            for cause in e.chain().skip(1) {
                eprintln!("  caused by: {cause}");
            }
            EXIT_RUNTIME
        }
    }
}
