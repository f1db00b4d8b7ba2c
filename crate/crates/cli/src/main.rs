use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use superprim::completion::ScaleFit;
use superprim::IntegrationMode;

mod commands;
mod config;

/// Segment-level monocular geometry tools.
#[derive(Debug, Parser)]
#[command(name = "superprim", version, arg_required_else_help = true)]
struct Cli {
    /// Seed for every random choice (scene generation, sparse sampling).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Ray-cast a preset scene into bundle directories.
    Synth(SynthArgs),
    /// Integrate a bundle's normals into unscaled log-depth per segment.
    Integrate(IntegrateArgs),
    /// Complete sparse depth using the bundle's primitives.
    Complete(CompleteArgs),
    /// Align reference primitives against target views.
    Sfm(SfmArgs),
    /// Run visual odometry over a directory of bundles.
    Vo(VoArgs),
    /// Depth error metrics between two float32 maps.
    EvalDepth(EvalDepthArgs),
    /// Absolute trajectory error after Sim(3) alignment.
    EvalAte(EvalAteArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// one of: two-view, few-view, orbit, static, curved
    #[arg(long, default_value = "two-view")]
    preset: String,
    /// Frame count (orbit, static, curved; few-view uses frames-1 targets).
    #[arg(long, default_value_t = 30)]
    frames: usize,
    /// Sparse depth samples drawn from the ground truth of every frame.
    #[arg(long, default_value_t = 0)]
    sparse: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct IntegrateArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "full")]
    mode: IntegrationMode,
}

#[derive(Debug, Args)]
struct CompleteArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// Sparse samples (`u v depth` lines); defaults to the bundle's own.
    #[arg(long)]
    sparse: Option<PathBuf>,
    /// Instead of a file, draw this many samples from the bundle's depth.
    #[arg(long, conflicts_with = "sparse")]
    samples: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    ply: Option<PathBuf>,
    /// Per-pixel provenance codes (u8: 0 undefined, 1 primitive, 2 measured, 3 interpolated).
    #[arg(long)]
    provenance: Option<PathBuf>,
    #[arg(long, default_value = "least-squares")]
    fit: ScaleFit,
    #[arg(long, default_value = "full")]
    mode: IntegrationMode,
    #[arg(long, default_value_t = 0.2)]
    d_min: f64,
    #[arg(long, default_value_t = 5.0)]
    d_max: f64,
}

#[derive(Debug, Args)]
struct SfmArgs {
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long, num_args = 1.., required = true)]
    targets: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "full")]
    mode: IntegrationMode,
    /// Optimiser iterations per pyramid level.
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    levels: Option<usize>,
}

#[derive(Debug, Args)]
struct VoArgs {
    /// Directory whose sub-directories (in name order) are the frames.
    #[arg(long)]
    frames: PathBuf,
    /// TOML file overriding configuration keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalDepthArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Intrinsics file giving the map size.
    #[arg(long)]
    intr: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    d_min: f64,
    #[arg(long, default_value_t = 5.0)]
    d_max: f64,
    /// Median-scale the prediction before measuring.
    #[arg(long)]
    median_scale: bool,
}

#[derive(Debug, Args)]
struct EvalAteArgs {
    #[arg(long)]
    est: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Timestamp association tolerance in seconds.
    #[arg(long, default_value_t = superprim::eval::DEFAULT_ASSOCIATION_TOL)]
    tol: f64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let seed = cli.seed;
    let res = match cli.command {
        Command::Synth(a) => commands::synth(&a, seed),
        Command::Integrate(a) => commands::integrate(&a),
        Command::Complete(a) => commands::complete(&a, seed),
        Command::Sfm(a) => commands::sfm(&a),
        Command::Vo(a) => commands::vo(&a),
        Command::EvalDepth(a) => commands::eval_depth(&a),
        Command::EvalAte(a) => commands::eval_ate(&a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
