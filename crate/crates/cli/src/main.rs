//! `pcae`: data generation, geodesic indexing, training, analysis and
//! theorem checks from the command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pcae::analysis::CumvarOrder;
use pcae::objective::IsoVariant;
use pcae::scheduler::ScheduleMode;
use pcae::theory::DistanceTarget;
use pcae::train::{Ablation, LossKind};

use config::Generator;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
    Tolerance(String),
    Io(std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Tolerance(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Tolerance(m) => write!(f, "tolerance not met: {m}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl From<pcae::Error> for CliError {
    fn from(e: pcae::Error) -> Self {
        use pcae::Error as E;
        match e {
            E::NonFinite { .. }
            | E::EigenFailure { .. }
            | E::Numerical(_)
            | E::AllZeroVariances
            | E::Unreachable { .. }
            | E::StaleCache { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(name = "pcae", version, about = "Principal component autoencoder toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset as CSV plus a metadata sidecar.
    GenData(GenDataArgs),
    /// Build the landmark geodesic index of a dataset.
    BuildGeodesic(GeodesicArgs),
    /// Train an autoencoder; writes a checkpoint and a JSON report.
    Train(TrainArgs),
    /// Estimate intrinsic dimension from a checkpoint's latent variances.
    EstimateDim(EstimateArgs),
    /// Interpolation smoothness score of a checkpoint.
    Smoothness(SmoothnessArgs),
    /// Decode a latent-space interpolation between two samples.
    Interpolate(InterpolateArgs),
    /// Numerical checks of the optimality theorems.
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    generator: Option<Generator>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d_true: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    /// Comma-separated per-factor variances, descending.
    #[arg(long, value_delimiter = ',')]
    variances: Option<Vec<f64>>,
    #[arg(long)]
    noise_sd: Option<f64>,
    #[arg(long)]
    height: Option<f64>,
    #[arg(long)]
    ambient: Option<usize>,
    /// Also write 70/15/15 train/val/test CSVs next to the output.
    #[arg(long)]
    split: bool,
}

#[derive(Args, Debug)]
pub struct GeodesicArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    landmarks: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: PathBuf,
    /// Geodesic index of `--data`; required unless the isometry term is off.
    #[arg(long)]
    geo: Option<PathBuf>,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Report path; defaults to the checkpoint path with `.report.json`.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Also write final latent variances as CSV.
    #[arg(long)]
    variances_csv: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, value_enum)]
    iso_variant: Option<IsoArg>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    period: Option<usize>,
    #[arg(long, value_enum)]
    schedule: Option<ScheduleArg>,
    #[arg(long)]
    pair_rounds: Option<usize>,
    #[arg(long = "tau")]
    taus: Vec<f64>,
    #[arg(long, value_enum)]
    loss: Option<LossArg>,
    #[arg(long, value_enum)]
    ablate: Option<AblateArg>,
    #[arg(long, value_enum)]
    order: Option<OrderArg>,
}

#[derive(Args, Debug)]
pub struct EstimateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long = "tau")]
    taus: Vec<f64>,
    #[arg(long, value_enum)]
    order: Option<OrderArg>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SmoothnessArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = pcae::analysis::DEFAULT_SMOOTHNESS_PAIRS)]
    pairs: usize,
    #[arg(long, default_value_t = pcae::analysis::DEFAULT_SMOOTHNESS_STEPS)]
    steps: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct InterpolateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Column index of the start sample.
    #[arg(long)]
    from: usize,
    /// Column index of the end sample.
    #[arg(long)]
    to: usize,
    #[arg(long, default_value_t = pcae::analysis::DEFAULT_SMOOTHNESS_STEPS)]
    steps: usize,
    /// CSV of decoded points, one row per step.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[command(subcommand)]
    which: Verify,
}

#[derive(Subcommand, Debug)]
pub enum Verify {
    /// Stiefel solver against the eigenvector optimum on random instances.
    Theorem1(Theorem1Args),
    /// Isometry of an encoder trained on a flat manifold.
    Theorem2(Theorem2Args),
}

#[derive(Args, Debug)]
pub struct Theorem1Args {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 4)]
    p: usize,
    #[arg(long, default_value_t = 10)]
    instances: usize,
    /// Fixed comma-separated weights; random ascending weights below 2 when absent.
    #[arg(long, value_delimiter = ',')]
    gammas: Option<Vec<f64>>,
    #[arg(long, default_value_t = 200_000)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    gap_tol: f64,
    #[arg(long, default_value_t = 0.999)]
    align_tol: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct Theorem2Args {
    #[command(flatten)]
    common: Common,
    /// Samples on the flat strip; ignored with `--data`.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = std::f64::consts::PI)]
    height: f64,
    /// Use these samples instead of a generated strip (graph targets only).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.5, 1.0])]
    gammas: Vec<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, value_enum)]
    target: Option<TargetArg>,
    #[arg(long, default_value_t = 0.05)]
    mean_tol: f64,
    #[arg(long, default_value_t = 0.12)]
    p95_tol: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

macro_rules! value_enum_into {
    ($arg:ident => $target:ty { $($variant:ident => $value:expr),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, ValueEnum)]
        pub enum $arg { $($variant),+ }
        impl From<$arg> for $target {
            fn from(a: $arg) -> Self {
                match a { $($arg::$variant => $value),+ }
            }
        }
    };
}

value_enum_into!(IsoArg => IsoVariant { AbsSqDiff => IsoVariant::AbsSqDiff, Square => IsoVariant::Square, Log => IsoVariant::LogSq });
value_enum_into!(ScheduleArg => ScheduleMode {
    Dynamic => ScheduleMode::Dynamic,
    Arithmetic => ScheduleMode::Arithmetic,
    Geometric => ScheduleMode::Geometric,
});
value_enum_into!(LossArg => LossKind { Pcae => LossKind::Pcae, Hae => LossKind::Hae, ReconOnly => LossKind::ReconOnly });
value_enum_into!(AblateArg => Ablation { None => Ablation::None, VarOnly => Ablation::VarOnly, IsoOnly => Ablation::IsoOnly });
value_enum_into!(OrderArg => CumvarOrder { Index => CumvarOrder::Index, Descending => CumvarOrder::Descending });
value_enum_into!(TargetArg => DistanceTarget { Graph => DistanceTarget::Graph, Chart => DistanceTarget::Chart });

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("PCAE_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("PCAE_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::BuildGeodesic(a) => commands::build_geodesic(a),
        Command::Train(a) => commands::train(a),
        Command::EstimateDim(a) => commands::estimate_dim(a),
        Command::Smoothness(a) => commands::smoothness(a),
        Command::Interpolate(a) => commands::interpolate(a),
        Command::Verify(VerifyArgs { which: Verify::Theorem1(a) }) => commands::verify_theorem1(a),
        Command::Verify(VerifyArgs { which: Verify::Theorem2(a) }) => commands::verify_theorem2(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
