use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod error;
mod io;

#[derive(Parser, Debug)]
#[command(
    name = "harmony",
    version,
    about = "Token-scheduling load balancer for MoE expert parallelism"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build an expert placement and write it as JSON.
    Placement(PlacementArgs),
    /// Solve one micro-batch and write its routing table.
    Solve(SolveArgs),
    /// Run a skew or trace sweep described by a config file.
    Sweep(SweepArgs),
    /// Convert traces between CSV and JSON, or generate a Zipf trace.
    TraceConvert(TraceArgs),
}

/// Cluster dimensions for constructions that do not fix them.
#[derive(Args, Debug, Clone)]
struct ShapeArgs {
    #[arg(long, default_value_t = 8)]
    gpus: usize,
    #[arg(long, default_value_t = 32)]
    experts: usize,
    /// Replicas per expert.
    #[arg(long, default_value_t = 2)]
    d: usize,
    /// Defaults to all GPUs on one node.
    #[arg(long)]
    gpus_per_node: Option<usize>,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("kind").required(true).args(["cayley", "random", "asymmetric"])))]
struct PlacementArgs {
    /// Cayley-graph placement on 2^p GPUs with 2^q experts per GPU.
    #[arg(long, requires_all = ["p", "q"])]
    cayley: bool,
    #[arg(short, requires = "cayley")]
    p: Option<u32>,
    #[arg(short, requires = "cayley")]
    q: Option<u32>,
    /// Uniformly random slot-consistent placement.
    #[arg(long)]
    random: bool,
    /// Load-aware placement by Monte-Carlo search; needs --loads.
    #[arg(long, requires = "loads")]
    asymmetric: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Candidates drawn by --asymmetric.
    #[arg(long, default_value_t = 200)]
    samples: usize,
    /// Trace CSV whose mean expert loads weight the density report.
    #[arg(long)]
    loads: Option<PathBuf>,
    #[command(flatten)]
    shape: ShapeArgs,
    #[arg(long, default_value = "placement.json")]
    out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Balance,
    CommAware,
    TopologyAware,
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[arg(long)]
    placement: PathBuf,
    /// Trace CSV; one micro-batch is solved.
    #[arg(long)]
    loads: PathBuf,
    #[arg(long, default_value_t = 0)]
    microbatch: usize,
    #[arg(long, value_enum, default_value_t = Mode::Balance)]
    mode: Mode,
    /// Communication weight in comm-aware mode.
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, default_value_t = 0.1)]
    alpha_intra: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha_inter: f64,
    /// Defaults to all GPUs on one node.
    #[arg(long)]
    gpus_per_node: Option<usize>,
    #[arg(long, default_value = "routing.csv")]
    routing: PathBuf,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_delimiter = ',')]
    strategies: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    s_values: Option<Vec<f64>>,
    #[arg(long)]
    microbatches: Option<usize>,
    #[arg(long)]
    tokens_per_gpu: Option<u64>,
    /// Output directory; overrides the config's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TraceArgs {
    /// Input trace, .csv or .json; omit with --zipf.
    #[arg(long, required_unless_present = "zipf", conflicts_with = "zipf")]
    input: Option<PathBuf>,
    /// Output trace, .csv or .json.
    #[arg(long)]
    output: PathBuf,
    /// Generate a Zipf trace instead of converting one.
    #[arg(long)]
    zipf: bool,
    #[arg(long, default_value_t = 1.0)]
    s: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2048)]
    tokens_per_gpu: u64,
    #[arg(long, default_value_t = 50)]
    microbatches: usize,
    #[command(flatten)]
    shape: ShapeArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Placement(args) => commands::placement::run(&args),
        Command::Solve(args) => commands::solve::run(&args),
        Command::Sweep(args) => commands::sweep::run(&args),
        Command::TraceConvert(args) => commands::trace::run(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
