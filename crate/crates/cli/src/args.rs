use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use haad::dynamics::{Integrator, MassMode, DEFAULT_ETA, DEFAULT_STEPS};
use haad::potential::DEFAULT_D_PHY;
use haad::synthbench::{SweepParam, SynthConfig};
use haad::training::{DEFAULT_BATCH, DEFAULT_GAMMA, DEFAULT_LAMBDA, DEFAULT_LR};

#[derive(Parser, Debug)]
#[command(name = "haad", version, about = "Hamiltonian stability probe over patch-feature grids")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write synthetic feature files.
    #[command(args_override_self = true)]
    Gen(GenArgs),
    /// Train a model on a feature file.
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// Score a feature file with a checkpoint.
    #[command(args_override_self = true)]
    Eval(EvalArgs),
    /// Export the trajectory of one sample.
    #[command(args_override_self = true)]
    Rollout(RolloutArgs),
    /// Volume, solver, omitted-term and landscape diagnostics.
    #[command(args_override_self = true)]
    Diagnose(DiagnoseArgs),
    /// Compare tape gradients with finite differences.
    #[command(args_override_self = true)]
    Gradcheck(GradcheckArgs),
    /// Generate, train and evaluate the synthetic benchmark in one go.
    #[command(args_override_self = true)]
    Bench(BenchArgs),
    /// Retrain the benchmark across values of one setting.
    #[command(args_override_self = true)]
    Sweep(SweepArgs),
}

/// `HxW` grid size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridSize {
    pub h: usize,
    pub w: usize,
}

impl FromStr for GridSize {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (h, w) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("expected HxW, got `{s}`"))?;
        let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("bad grid size `{s}`: {e}"));
        let (h, w) = (parse(h)?, parse(w)?);
        if h == 0 || w == 0 {
            return Err(format!("grid sides must be positive, got `{s}`"));
        }
        Ok(GridSize { h, w })
    }
}

#[derive(Args, Debug, Clone)]
pub struct SynthArgs {
    /// Patch grid, `HxW`.
    #[arg(long, default_value = "8x8")]
    pub grid: GridSize,
    #[arg(long, default_value_t = 32)]
    pub din: usize,
    #[arg(long, default_value_t = SynthConfig::default().smooth_len)]
    pub smooth_len: usize,
    #[arg(long, default_value_t = SynthConfig::default().artifact_frac)]
    pub artifact_frac: f64,
    #[arg(long, default_value_t = SynthConfig::default().artifact_gain)]
    pub artifact_gain: f64,
    #[arg(long, default_value_t = SynthConfig::default().artifact_channels)]
    pub artifact_channels: f64,
    #[arg(long, default_value_t = SynthConfig::default().noise_floor)]
    pub noise_floor: f64,
    #[arg(long, default_value_t = SynthConfig::default().amplitude)]
    pub amplitude: f64,
    /// Replace every fake by an independent real draw.
    #[arg(long, num_args = 0..=1, default_value_t = false, default_missing_value = "true")]
    pub null_control: bool,
}

impl SynthArgs {
    pub fn config(&self, seed: u64, n_train: usize, n_val: usize) -> SynthConfig {
        SynthConfig {
            h_p: self.grid.h,
            w_p: self.grid.w,
            d_in: self.din,
            smooth_len: self.smooth_len,
            artifact_frac: self.artifact_frac,
            artifact_gain: self.artifact_gain,
            artifact_channels: self.artifact_channels,
            noise_floor: self.noise_floor,
            amplitude: self.amplitude,
            n_train,
            n_val,
            seed,
            null_control: self.null_control,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = DEFAULT_LR)]
    pub lr: f64,
    #[arg(long, default_value_t = DEFAULT_BATCH)]
    pub batch: usize,
    /// Weight of the physical loss.
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    pub lambda: f64,
    /// Hinge margin on the action of fakes.
    #[arg(long, default_value_t = DEFAULT_GAMMA)]
    pub gamma: f64,
    /// Rollout steps `T`.
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    pub steps: usize,
    #[arg(long, default_value_t = DEFAULT_ETA)]
    pub eta: f64,
    #[arg(long, default_value_t = Integrator::SymplecticEuler)]
    pub integrator: Integrator,
    #[arg(long, default_value_t = MassMode::Learned)]
    pub mass_mode: MassMode,
    #[arg(long, default_value_t = 1.0)]
    pub lambda_geo: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda_photo: f64,
    #[arg(long, default_value_t = DEFAULT_D_PHY)]
    pub d_phy: usize,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[command(flatten)]
    pub synth: SynthArgs,
    /// Samples in the main file.
    #[arg(long, default_value_t = 600)]
    pub n: usize,
    #[arg(long, default_value_t = SynthConfig::default().seed)]
    pub seed: u64,
    #[arg(long, default_value = "features.haad")]
    pub out: PathBuf,
    /// Optional second file whose indices follow the main file's.
    #[arg(long)]
    pub val_out: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    pub n_val: usize,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training feature file.
    #[arg(long)]
    pub data: PathBuf,
    /// Validation feature file for the per-epoch AUC.
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "checkpoint.json")]
    pub out: PathBuf,
    #[arg(long, default_value = "history.csv")]
    pub history: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Directory for the score, histogram and trajectory CSVs.
    #[arg(long, default_value = "eval_out")]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RolloutArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// Overrides the checkpoint's rollout steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Output CSV; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Feature file for the solver table, omitted-term sweep and slice.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Use closed-form potentials only.
    #[arg(long, num_args = 0..=1, default_value_t = false, default_missing_value = "true")]
    pub analytic: bool,
    #[arg(long, default_value_t = 100)]
    pub probes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "landscape.csv")]
    pub slice_out: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub slice_extent: f64,
    #[arg(long, default_value_t = 21)]
    pub slice_points: usize,
    /// Timed passes per integrator in the solver table.
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    pub seeds: usize,
    #[arg(long, default_value_t = haad::training::GRADCHECK_TOL)]
    pub tol: f64,
    /// Test hook: perturb the tape gradient of one parameter group.
    #[arg(long, hide = true)]
    pub corrupt: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[command(flatten)]
    pub synth: SynthArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 400)]
    pub n_train: usize,
    #[arg(long, default_value_t = 200)]
    pub n_val: usize,
    /// Generator seed.
    #[arg(long, default_value_t = SynthConfig::default().seed)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub train_seed: u64,
    #[arg(long, default_value = "bench_out")]
    pub out_dir: PathBuf,
    /// Also write the solver comparison table.
    #[arg(long, num_args = 0..=1, default_value_t = false, default_missing_value = "true")]
    pub solvers: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// steps | eta | lambda
    #[arg(long)]
    pub param: SweepParam,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
    #[command(flatten)]
    pub synth: SynthArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 400)]
    pub n_train: usize,
    #[arg(long, default_value_t = 200)]
    pub n_val: usize,
    #[arg(long, default_value_t = SynthConfig::default().seed)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub train_seed: u64,
    /// Output CSV; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}
