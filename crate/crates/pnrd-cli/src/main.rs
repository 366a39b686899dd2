//! Command-line front end: analytic curve sweeps, Monte Carlo runs, and
//! synthetic calibration experiments, all emitted as CSV.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod output;

use config::{FileConfig, GridSpec, MeanList};

/// Errors surfaced by the CLI, each mapped to a stable exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad or missing flags/config values (exit 2).
    Usage(String),
    /// Filesystem failures (exit 1).
    Io(String),
    /// Library errors, mapped by kind (protocol errors get their own codes).
    Core(pnrd::Error),
}

impl From<pnrd::Error> for CliError {
    fn from(e: pnrd::Error) -> Self {
        CliError::Core(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Io(msg) => write!(f, "{msg}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 1,
            CliError::Core(e) => match e {
                pnrd::Error::Domain(_) | pnrd::Error::Validation(_) => 2,
                pnrd::Error::Numerical(_) => 1,
                pnrd::Error::InsufficientData(_) => 3,
                pnrd::Error::SaturationNotReached(_) => 4,
                pnrd::Error::ModelMismatch(_) => 5,
                pnrd::Error::NonQuantumData(_) => 6,
            },
        }
    }
}

#[derive(Parser)]
#[command(
    name = "pnrd",
    version,
    about = "Photocount statistics and calibration for saturating photon-number-resolving detectors"
)]
struct Cli {
    /// Optional key=value config file; flags take precedence over its values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mean photocount vs drive mean for one detector (log-spaced sweep).
    ResponseCurve(ResponseArgs),
    /// VDP, NRF, and Q of the coherent and twin-beam sources over a sweep.
    VdpCurve(VdpArgs),
    /// Q over an (nbar, eta) grid with ridge files of the grid optima.
    QMap(QMapArgs),
    /// One Monte Carlo run compared against the analytic references.
    Simulate(SimulateArgs),
    /// Synthetic calibration experiment with a chosen protocol.
    Calibrate(CalibrateArgs),
}

#[derive(Args)]
pub struct ResponseArgs {
    /// Quantum efficiency of the detector [default: 0.5].
    #[arg(long)]
    eta: Option<f64>,
    /// Maximum resolvable photocount [default: 3].
    #[arg(long)]
    n_max_count: Option<usize>,
    /// Smallest drive mean [default: 0.01].
    #[arg(long)]
    nbar_min: Option<f64>,
    /// Largest drive mean [default: 100].
    #[arg(long)]
    nbar_max: Option<f64>,
    /// Number of log-spaced sweep points [default: 200].
    #[arg(long)]
    points: Option<usize>,
    /// Output CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct VdpArgs {
    /// Efficiency of detector 1 [default: 0.5].
    #[arg(long)]
    eta1: Option<f64>,
    /// Efficiency of detector 2 [default: 0.5].
    #[arg(long)]
    eta2: Option<f64>,
    /// Maximum count of detector 1 [default: 3].
    #[arg(long)]
    n1: Option<usize>,
    /// Maximum count of detector 2 [default: 3].
    #[arg(long)]
    n2: Option<usize>,
    /// Drive sweep as min,max,points (log-spaced) [default: 0.01,100,120].
    #[arg(long)]
    nbar_grid: Option<GridSpec>,
    /// Output CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct QMapArgs {
    /// Maximum resolvable photocount of both detectors [default: 3].
    #[arg(long)]
    n_max_count: Option<usize>,
    /// Drive grid as min,max,points (log-spaced) [default: 0.1,100,40].
    #[arg(long)]
    nbar_grid: Option<GridSpec>,
    /// Efficiency grid as min,max,points (linear) [default: 0.05,1,40].
    #[arg(long)]
    eta_grid: Option<GridSpec>,
    /// Output CSV path; ridge files derive from it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Source kind: tmc or twb.
    #[arg(long)]
    source: Option<String>,
    /// Efficiency of detector 1 [default: 0.5].
    #[arg(long)]
    eta1: Option<f64>,
    /// Efficiency of detector 2 [default: 0.5].
    #[arg(long)]
    eta2: Option<f64>,
    /// Maximum count of detector 1 [default: 3].
    #[arg(long)]
    n1: Option<usize>,
    /// Maximum count of detector 2 [default: 3].
    #[arg(long)]
    n2: Option<usize>,
    /// Mean photon number of the drive [default: 1].
    #[arg(long)]
    nbar: Option<f64>,
    /// Number of Monte Carlo trials [default: 100000].
    #[arg(long)]
    trials: Option<u64>,
    /// RNG seed [default: PNRD_SEED or 12345].
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads [default: 1].
    #[arg(long)]
    workers: Option<usize>,
    /// Output CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct CalibrateArgs {
    /// Protocol: twb-linear or tmc-nonlinear.
    #[arg(long)]
    method: Option<String>,
    /// Refit a previously written run CSV instead of simulating one.
    #[arg(long)]
    run_csv: Option<PathBuf>,
    /// True efficiency of detector 1 (synthetic truth).
    #[arg(long)]
    true_eta1: Option<f64>,
    /// True efficiency of detector 2 (synthetic truth).
    #[arg(long)]
    true_eta2: Option<f64>,
    /// True maximum count of detector 1.
    #[arg(long)]
    true_n1: Option<usize>,
    /// True maximum count of detector 2.
    #[arg(long)]
    true_n2: Option<usize>,
    /// Comma-separated drive means [default: method-specific].
    #[arg(long)]
    grid: Option<MeanList>,
    /// Trials per grid point [default: method-specific].
    #[arg(long)]
    trials: Option<u64>,
    /// RNG seed [default: PNRD_SEED or 12345].
    #[arg(long)]
    seed: Option<u64>,
    /// Linear-regime filter threshold for twb-linear [default: 0.1].
    #[arg(long)]
    regime_threshold: Option<f64>,
    /// Output CSV path for the run record; the result file derives from it.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::empty(),
    };
    match cli.command {
        Command::ResponseCurve(args) => commands::run_response_curve(args, &config),
        Command::VdpCurve(args) => commands::run_vdp_curve(args, &config),
        Command::QMap(args) => commands::run_q_map(args, &config),
        Command::Simulate(args) => commands::run_simulate(args, &config),
        Command::Calibrate(args) => commands::run_calibrate(args, &config),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
