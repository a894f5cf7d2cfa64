//! `polyconv` command-line front end.
//!
//! Exit codes: 0 success, 2 invalid input (bad option values, malformed
//! files, shape mismatches), 3 I/O failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "polyconv",
    version,
    about = "Polynomial temporal kernels, einsum planning and streaming inference on event data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Discretize a Jacobi basis into per-bin integrals.
    GenBasis(GenBasisArgs),
    /// List every contraction path of an expression with its costs.
    Plan(PlanArgs),
    /// Bin an event file into a frame tensor.
    Bin(BinArgs),
    /// Run a model over a frame tensor and write per-frame predictions.
    Infer(InferArgs),
    /// Re-target a model to a new bin size.
    Resample(ResampleArgs),
    /// Report parameters and multiply-accumulates of a model.
    Cost(CostArgs),
    /// Write a preset model with seeded random weights.
    InitModel(InitModelArgs),
}

#[derive(Debug, Args)]
struct GenBasisArgs {
    #[arg(long, default_value_t = -0.25, allow_negative_numbers = true)]
    alpha: f64,
    #[arg(long, default_value_t = -0.25, allow_negative_numbers = true)]
    beta: f64,
    /// Highest polynomial degree N; the basis has N + 1 rows.
    #[arg(long, default_value_t = 4)]
    degree: usize,
    /// Number of bins K.
    #[arg(long, default_value_t = 10)]
    bins: usize,
    #[arg(long, default_value_t = 10_000)]
    bin_us: u64,
    #[arg(long)]
    out: PathBuf,
    /// CSV of coefficients, one kernel per row with N + 1 values.
    #[arg(long, requires = "kernels_out")]
    gamma: Option<PathBuf>,
    /// Where to write the materialized kernels, one row of K taps each.
    #[arg(long, requires = "gamma")]
    kernels_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PlanArgs {
    /// Expression such as `cxyt,dnc,nt't->dxyt'`.
    #[arg(long)]
    expr: String,
    /// Label extents, `label=size`; repeat or separate with commas.
    #[arg(long = "size", value_delimiter = ',', required = true)]
    sizes: Vec<String>,
    /// Convolution pairs, `input:output:kernel`, e.g. `t:t':10`.
    #[arg(long = "conv", value_delimiter = ',')]
    convs: Vec<String>,
    #[arg(long, value_enum, default_value_t = ObjectiveArg::Compute)]
    objective: ObjectiveArg,
    #[arg(long, value_enum, default_value_t = ModeArg::Valid)]
    mode: ModeArg,
}

#[derive(Debug, Args)]
struct BinArgs {
    #[arg(long)]
    events: PathBuf,
    /// Event file format; inferred from the extension when omitted.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[arg(long, value_enum, default_value_t = MethodArg::Direct)]
    method: MethodArg,
    #[arg(long, default_value_t = 10_000)]
    bin_us: u64,
    #[arg(long)]
    frames: usize,
    #[arg(long)]
    height: usize,
    #[arg(long)]
    width: usize,
    #[arg(long, default_value_t = 0)]
    origin_us: u64,
    /// Sensor resolution when it differs from the output grid.
    #[arg(long, requires = "sensor_height")]
    sensor_width: Option<usize>,
    #[arg(long, requires = "sensor_width")]
    sensor_height: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct InferArgs {
    #[arg(long)]
    model: PathBuf,
    /// Frame tensor written by `bin`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = EmissionArg::Strict)]
    mode: EmissionArg,
    /// Majority filter window over predicted classes; 1 disables it.
    #[arg(long, default_value_t = 1)]
    window: usize,
    /// Detection score threshold for detection heads.
    #[arg(long, default_value_t = 0.05)]
    threshold: f64,
    #[arg(long, default_value_t = 100)]
    top_k: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ResampleArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    bin_us: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CostArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum, default_value_t = ObjectiveArg::Compute)]
    objective: ObjectiveArg,
}

#[derive(Debug, Args)]
struct InitModelArgs {
    #[arg(long, value_enum)]
    preset: PresetArg,
    /// Weight seed; required so every file is reproducible.
    #[arg(long)]
    seed: u64,
    /// Bins per temporal kernel.
    #[arg(long, default_value_t = 10)]
    bins: usize,
    #[arg(long, default_value_t = 10_000)]
    bin_us: u64,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 2)]
    channels: usize,
    /// Temporal layers (temporal-stack) or blocks (random-blocks).
    #[arg(long, default_value_t = 5)]
    layers: usize,
    #[arg(long, default_value_t = 11)]
    classes: usize,
    #[arg(long, value_enum, default_value_t = EmissionArg::Strict)]
    emission: EmissionArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Memory,
    Compute,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Valid,
    Same,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Binary,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Direct,
    EventVolume,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EmissionArg {
    Strict,
    ZeroPadded,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PresetArg {
    /// Hourglass detector with a CenterNet head on 2x160x320 input.
    Detector,
    /// Five-block gesture classifier.
    Gesture,
    /// Temporal layers with ReLU in between.
    TemporalStack,
    /// Linear two-block model.
    LinearTwoBlock,
    /// One full temporal layer.
    SingleTemporal,
    /// Randomly shaped blocks.
    RandomBlocks,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenBasis(a) => commands::gen_basis(&a),
        Command::Plan(a) => commands::plan(&a),
        Command::Bin(a) => commands::bin(&a),
        Command::Infer(a) => commands::infer(&a),
        Command::Resample(a) => commands::resample(&a),
        Command::Cost(a) => commands::cost(&a),
        Command::InitModel(a) => commands::init_model(&a),
    };
    match result {
        Ok(report) => {
            print!("{report}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
