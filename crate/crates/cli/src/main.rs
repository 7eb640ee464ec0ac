use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod outputs;

#[derive(Parser)]
#[command(name = "pyrreg", version, about = "Recursive coarse-to-fine image registration")]
struct Cli {
    /// Worker threads for all parallel work (default: available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Register two images and write the displacement as PFM.
    Register(RegisterArgs),
    /// Train a network from a TOML config.
    Train(TrainArgs),
    /// Evaluate disparities against a dataset's ground truth.
    Eval(EvalArgs),
    /// Distort an image with a random field and write a scene folder.
    Synth(SynthArgs),
    /// Print the layer table of a network.
    Inspect(InspectArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum EstimatorKind {
    Oracle,
    Cnn,
}

#[derive(Args, Clone, Debug)]
struct EstimatorArgs {
    #[arg(long, value_enum, default_value = "oracle")]
    estimator: EstimatorKind,
    /// Network weights, required for `--estimator cnn`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Estimator range in pixels. Defaults to 2 for the oracle and to the
    /// checkpoint's value for the network.
    #[arg(long)]
    mu: Option<f32>,
    /// Oracle patch radius.
    #[arg(long, default_value_t = 3)]
    patch_radius: usize,
    /// Deepest recursion level (0 = full resolution only).
    #[arg(long)]
    max_depth: Option<usize>,
    /// Estimate horizontal displacements only.
    #[arg(long)]
    stereo: bool,
}

#[derive(Args)]
struct RegisterArgs {
    /// First (reference) image, PPM or PGM.
    left: PathBuf,
    /// Second image, PPM or PGM.
    right: PathBuf,
    /// Output PFM with the horizontal component.
    #[arg(short, long)]
    out: PathBuf,
    /// Output PFM with the vertical component.
    #[arg(long)]
    out_dy: Option<PathBuf>,
    /// False-color rendering of the horizontal component (PPM).
    #[arg(long)]
    color: Option<PathBuf>,
    #[command(flatten)]
    estimator: EstimatorArgs,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(short, long)]
    config: PathBuf,
    /// Print a progress line every this many steps.
    #[arg(long, default_value_t = 100)]
    log_every: usize,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of scene folders.
    #[arg(long)]
    dataset: PathBuf,
    /// Directory of predictions named `<scene>.pfm`; without it each scene
    /// is registered with the estimator options.
    #[arg(long)]
    pred_dir: Option<PathBuf>,
    /// Write one record line per scene here.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Left-right consistency tolerance in pixels.
    #[arg(long, default_value_t = pyrreg::eval::DEFAULT_OCCLUSION_TOLERANCE)]
    occlusion_tol: f32,
    #[command(flatten)]
    estimator: EstimatorArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SynthKind {
    Shift,
    Smooth,
}

#[derive(Args)]
struct SynthArgs {
    /// Source image, PPM or PGM.
    image: PathBuf,
    /// Scene folder to create (im0, im1, disp0.pfm).
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, value_enum, default_value = "smooth")]
    kind: SynthKind,
    /// Largest displacement component in pixels.
    #[arg(long, default_value_t = 4.0)]
    max_magnitude: f32,
    /// Bound on the field's slope.
    #[arg(long, default_value_t = 0.5)]
    lambda: f32,
    /// Smoothness of the random field in pixels.
    #[arg(long, default_value_t = 16.0)]
    sigma: f32,
    #[arg(long)]
    stereo: bool,
    #[arg(long, default_value_t = pyrreg::rng::DEFAULT_SEED)]
    seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ArchitectureArg {
    Table1,
    Compact,
}

#[derive(Args)]
struct InspectArgs {
    /// Checkpoint to inspect; without it the chosen architecture is shown.
    checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "table1")]
    architecture: ArchitectureArg,
    /// Input height (default: the receptive field).
    #[arg(long)]
    height: Option<usize>,
    /// Input width (default: the receptive field).
    #[arg(long)]
    width: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        anyhow::ensure!(n > 0, "--threads must be at least 1");
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Register(a) => commands::register(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Synth(a) => commands::synth(a),
        Command::Inspect(a) => commands::inspect(a),
    }
}
