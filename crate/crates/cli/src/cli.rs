use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::experiment::{FamilyKind, Preset};
use multipen::tuner::SearchMethod;

#[derive(Debug, Parser)]
#[command(name = "multipen", version, about = "Multi-penalty regression: tuning, simulation study and bound calculators")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Replicated simulation study; writes results.csv and summary.json.
    Simulate(SimulateArgs),
    /// Tune penalties on a CSV dataset and print the result as JSON.
    Tune(TuneArgs),
    /// Evaluate the oracle-inequality bound shapes.
    #[command(subcommand)]
    Bounds(BoundsCommand),
    /// Compare prediction changes under λ perturbations with the Lipschitz factor.
    VerifyLipschitz(VerifyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Grad,
    Neldermead,
}

impl From<MethodArg> for SearchMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Grad => SearchMethod::GradientDescentLog,
            MethodArg::Neldermead => SearchMethod::NelderMeadLog,
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub sim: u8,
    /// Scale preset; explicit flags override it.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_val: Option<usize>,
    #[arg(long)]
    pub dims: Option<usize>,
    /// Numbers of free penalty parameters, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub free: Option<Vec<usize>>,
    /// Scalar starting values broadcast to every free parameter.
    #[arg(long, value_delimiter = ',')]
    pub starts: Option<Vec<f64>>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lambda_min: Option<f64>,
    #[arg(long)]
    pub lambda_max: Option<f64>,
    #[arg(long, value_enum, default_value_t = MethodArg::Grad)]
    pub method: MethodArg,
    #[arg(long, value_enum, default_value_t = FamilyKind::Gam)]
    pub family: FamilyKind,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Write zero wall-clock times so reruns are byte-identical.
    #[arg(long)]
    pub no_timing: bool,
    #[arg(long, default_value = "results")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Ridge,
    Enet,
    Gam,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    /// CSV with columns x1..xp, y and optional truth/noise.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub model: ModelArg,
    /// Group sizes for ridge and elastic net; one column per group by default.
    #[arg(long, value_delimiter = ',')]
    pub groups: Option<Vec<usize>>,
    /// Elastic-net quadratic weight.
    #[arg(long, default_value_t = 1.0)]
    pub w: f64,
    /// Number of free penalties (nested tying); all penalties free by default.
    #[arg(long)]
    pub free: Option<usize>,
    /// Exhaustive search over these scalars, broadcast to every free parameter.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    /// Averaged K-fold cross-validation instead of a single split.
    #[arg(long)]
    pub folds: Option<usize>,
    /// Training rows of the split; half the data by default.
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_val: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-6)]
    pub lambda_min: f64,
    #[arg(long, default_value_t = 1e2)]
    pub lambda_max: f64,
    #[arg(long, value_enum, default_value_t = MethodArg::Grad)]
    pub method: MethodArg,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1.0, 0.1, 0.01])]
    pub starts: Vec<f64>,
}

#[derive(Debug, Subcommand)]
pub enum BoundsCommand {
    /// Smallest δ² of the train/validation oracle inequality.
    Theorem1(Theorem1Args),
    /// Remainder of the averaged K-fold oracle inequality.
    CvRemainder(CvArgs),
    /// Metric entropy of the fitted-model class.
    Entropy(EntropyArgs),
}

#[derive(Debug, Args)]
pub struct CommonBoundArgs {
    #[arg(long, default_value_t = 1)]
    pub dims: usize,
    /// Total sample size n.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 100)]
    pub n_val: usize,
    /// λ_max − λ_min.
    #[arg(long, default_value_t = 1.0)]
    pub delta_lambda: f64,
}

#[derive(Debug, Args)]
pub struct Theorem1Args {
    #[command(flatten)]
    pub common: CommonBoundArgs,
    /// ‖C_Λ‖_V.
    #[arg(long)]
    pub c_norm: f64,
    #[arg(long, default_value_t = 0.0)]
    pub oracle_risk: f64,
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub common: CommonBoundArgs,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub a: f64,
    #[arg(long, default_value_t = 1.0)]
    pub k0: f64,
    #[arg(long)]
    pub sigma0: f64,
    #[arg(long, default_value_t = 1.0)]
    pub h_tilde: f64,
    #[arg(long, default_value_t = 1.0)]
    pub c1: f64,
    #[arg(long, default_value_t = 1.0)]
    pub c_k0b: f64,
}

#[derive(Debug, Args)]
pub struct EntropyArgs {
    #[arg(long)]
    pub u: f64,
    #[arg(long, default_value_t = 1)]
    pub dims: usize,
    #[arg(long)]
    pub c_norm: f64,
    #[arg(long, default_value_t = 1.0)]
    pub delta_lambda: f64,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, value_enum, default_value_t = ModelArg::Ridge)]
    pub family: ModelArg,
    /// Number of λ pairs.
    #[arg(long, default_value_t = 200)]
    pub pairs: usize,
    #[arg(long, default_value_t = 50)]
    pub test_points: usize,
    /// Number of penalty groups J.
    #[arg(long, default_value_t = 4)]
    pub dims: usize,
    /// Columns per group (ridge and elastic net).
    #[arg(long, default_value_t = 2)]
    pub group_size: usize,
    #[arg(long, default_value_t = 50)]
    pub n_train: usize,
    /// Noise level of the generated linear instance.
    #[arg(long, default_value_t = 0.5)]
    pub sigma: f64,
    #[arg(long, default_value_t = 1e-2)]
    pub lambda_min: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda_max: f64,
    #[arg(long, default_value_t = 0.5)]
    pub w: f64,
    /// Residuals and penalties from a pilot fit instead of the known truth.
    #[arg(long)]
    pub plug_in: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}
