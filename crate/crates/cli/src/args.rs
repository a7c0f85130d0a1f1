use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "periodmc", version, about = "Bayesian periodicity detection for multi-experiment time series")]
pub struct Cli {
    /// Configuration file with `key = value` lines.
    #[arg(long, global = true, env = "PERIODMC_CONFIG")]
    pub config: Option<PathBuf>,

    /// Maximum worker threads (results do not depend on it).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate, transform and write the canonical matrix.
    Preprocess(PreprocessArgs),
    /// Run the sampler on a matrix.
    Fit(FitArgs),
    /// Build a background data set and fit it with the real-data experiment parameters.
    Control(ControlArgs),
    /// Compute per-gene statistics, calibrate claims and order genes for display.
    Report(ReportArgs),
    /// Run the full pipeline per experiment subset and compare the subsets.
    Subsets(SubsetsArgs),
    /// Generate a synthetic matrix with known parameters.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InputFormat {
    Long,
    Wide,
}

impl From<InputFormat> for periodmc::Format {
    fn from(f: InputFormat) -> Self {
        match f {
            InputFormat::Long => periodmc::Format::Long,
            InputFormat::Wide => periodmc::Format::Wide,
        }
    }
}

#[derive(Debug, Args)]
pub struct MatrixInput {
    /// Input matrix (long format file, or a wide-format file or directory).
    #[arg(long)]
    pub matrix: PathBuf,

    #[arg(long, value_enum, default_value = "long")]
    pub format: InputFormat,
}

#[derive(Debug, Default, Args)]
pub struct SamplerOverrides {
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub thinning: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Input matrices; more than one requires --average-replicates.
    #[arg(long = "input", required = true)]
    pub inputs: Vec<PathBuf>,

    #[arg(long, value_enum, default_value = "long")]
    pub format: InputFormat,

    /// Subtract each array's median (steps run in command-line order).
    #[arg(long)]
    pub median_center: bool,

    /// Average the inputs cell by cell.
    #[arg(long)]
    pub average_replicates: bool,

    /// Blank series with more than this fraction missing.
    #[arg(long, value_name = "FRACTION")]
    pub filter_missing: Option<f64>,

    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    M1,
    M0,
}

impl From<ModelArg> for periodmc::ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::M1 => periodmc::ModelKind::M1,
            ModelArg::M0 => periodmc::ModelKind::M0,
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: MatrixInput,

    #[arg(long, value_enum, default_value = "m1")]
    pub model: ModelArg,

    /// State file whose first state supplies fixed experiment parameters.
    #[arg(long, value_name = "MODE_FILE")]
    pub fix_theta: Option<PathBuf>,

    #[command(flatten)]
    pub sampler: SamplerOverrides,

    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ControlKindArg {
    Permutation,
    M0,
}

#[derive(Debug, Args)]
pub struct ControlArgs {
    #[command(flatten)]
    pub input: MatrixInput,

    #[arg(long, value_enum, default_value = "permutation")]
    pub kind: ControlKindArg,

    /// Output directory of the real-data fit.
    #[arg(long, value_name = "FIT_DIR")]
    pub real: PathBuf,

    /// Seed of the permutation or simulation (defaults to the sampler seed).
    #[arg(long)]
    pub control_seed: Option<u64>,

    #[command(flatten)]
    pub sampler: SamplerOverrides,

    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub input: MatrixInput,

    /// Output directory of the periodic-model fit.
    #[arg(long, value_name = "FIT_DIR")]
    pub real: PathBuf,

    /// Output directory of the control fit.
    #[arg(long, value_name = "CONTROL_DIR")]
    pub control: PathBuf,

    /// Output directory of a trend-only fit; enables BIC01.
    #[arg(long, value_name = "FIT_DIR")]
    pub null: Option<PathBuf>,

    #[arg(long)]
    pub fpr: Option<f64>,

    #[arg(long)]
    pub bic_threshold: Option<f64>,

    /// Heatmap group sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub groups: Vec<usize>,

    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SubsetsArgs {
    #[command(flatten)]
    pub input: MatrixInput,

    /// Subset as `NAME=EXP1,EXP2`; repeat for each subset.
    #[arg(long = "subset", required = true)]
    pub subsets: Vec<String>,

    #[arg(long)]
    pub fpr: Option<f64>,

    #[arg(long)]
    pub bic_threshold: Option<f64>,

    /// Claim a gene by SNR when its posterior mean exceeds the 97.5% upper
    /// limit of at least this many control genes, instead of the FPR rule.
    #[arg(long, value_name = "COUNT")]
    pub upper_limit_count: Option<usize>,

    /// Significance level of the reproducibility scan.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,

    #[command(flatten)]
    pub sampler: SamplerOverrides,

    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SimulateKind {
    Periodic,
    M0,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value = "periodic")]
    pub kind: SimulateKind,

    #[arg(long, default_value_t = 200)]
    pub genes: usize,

    /// Time grid `START:STEP:COUNT`; repeat once per experiment.
    #[arg(long = "grid", default_values = ["0:10:24", "0:12:24", "5:15:24"])]
    pub grids: Vec<String>,

    #[arg(long, default_value_t = 150.0)]
    pub period: f64,

    #[arg(long, default_value_t = 0.002)]
    pub lambda: f64,

    /// Experiment phases, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub psi: Vec<f64>,

    #[arg(long, default_value_t = 0.5)]
    pub periodic_fraction: f64,

    /// Amplitude range `LOW,HIGH`.
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [1.0, 2.0])]
    pub amp: Vec<f64>,

    /// Noise standard deviation range `LOW,HIGH`.
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [0.1, 0.2])]
    pub noise_sd: Vec<f64>,

    #[arg(long, default_value_t = 1)]
    pub seed: u64,

    #[arg(long)]
    pub out: PathBuf,
}
