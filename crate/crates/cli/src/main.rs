mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ccopf::opf::SolverStatus;
use ccopf::Error;

#[derive(Parser)]
#[command(name = "ccopf", version, about = "Chance-constrained AC optimal power flow")]
struct Cli {
    /// Worker threads for sample evaluation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Only print warnings and errors.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct CaseArgs {
    /// Case file in MATPOWER matrix format.
    #[arg(long)]
    pub case: PathBuf,
    /// JSON modification recipe applied to the case.
    #[arg(long)]
    pub recipe: Option<PathBuf>,
}

#[derive(Args, Clone)]
pub struct UncArgs {
    /// Uncertainty specification (JSON).
    #[arg(long)]
    pub unc: PathBuf,
    /// Overrides every separate violation probability.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Overrides the joint violation probability.
    #[arg(long)]
    pub eps_joint: Option<f64>,
    #[arg(long, value_enum)]
    pub quantile: Option<Quantile>,
    /// Multiplies every standard deviation.
    #[arg(long)]
    pub sigma_scale: Option<f64>,
    /// Overrides the seed of the uncertainty file.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Clone)]
pub struct CritArgs {
    #[arg(long, default_value_t = 20)]
    pub max_iters: usize,
    /// Stopping threshold for active and reactive margins, MVA.
    #[arg(long, default_value_t = 1e-3)]
    pub eta_power: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub eta_v: f64,
    /// Stopping threshold for current margins, p.u.
    #[arg(long, default_value_t = 1e-3)]
    pub eta_i: f64,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Quantile {
    Gaussian,
    Chebyshev,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EngineArg {
    Analytical,
    Mc,
    Scenario,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum KindArg {
    Gaussian,
    Laplace,
}

#[derive(Subcommand)]
enum Command {
    /// Power flow at the stored dispatch.
    Pf {
        #[command(flatten)]
        case: CaseArgs,
        /// Start from θ = 0, v = 1 instead of the stored voltages.
        #[arg(long)]
        flat_start: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Deterministic AC OPF.
    Opf {
        #[command(flatten)]
        case: CaseArgs,
        /// Tightenings (JSON margins, as in a solve report) applied to the limits.
        #[arg(long)]
        margins: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Iterative chance-constrained OPF.
    Solve {
        #[command(flatten)]
        case: CaseArgs,
        #[command(flatten)]
        unc: UncArgs,
        #[command(flatten)]
        crit: CritArgs,
        #[arg(long, value_enum, default_value = "analytical")]
        engine: EngineArg,
        /// Draws for the Monte-Carlo engine.
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Empirical violation probabilities of a solved dispatch.
    Validate {
        #[command(flatten)]
        case: CaseArgs,
        #[command(flatten)]
        unc: UncArgs,
        /// JSON report written by `solve`.
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, value_enum, default_value = "gaussian")]
        kind: KindArg,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Runs the three margin engines on one case.
    Compare {
        #[command(flatten)]
        case: CaseArgs,
        #[command(flatten)]
        unc: UncArgs,
        #[command(flatten)]
        crit: CritArgs,
        /// Engines to run (comma separated).
        #[arg(long, value_enum, value_delimiter = ',', default_value = "analytical,mc,scenario")]
        engines: Vec<EngineArg>,
        /// Draws for the Monte-Carlo engine.
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        /// Held-out draws used to evaluate every engine.
        #[arg(long, default_value_t = 5000)]
        eval_samples: usize,
        #[arg(long, value_enum, default_value = "laplace")]
        eval_kind: KindArg,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Expected violation size over a grid of ε.
    Sweep {
        #[command(flatten)]
        case: CaseArgs,
        #[command(flatten)]
        unc: UncArgs,
        #[command(flatten)]
        crit: CritArgs,
        /// Grid as `start:stop:step` or a comma separated list.
        #[arg(long = "eps-grid", default_value = "0.01:0.15:0.01")]
        grid: String,
        #[arg(long, default_value_t = 2000)]
        samples: usize,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Sensitivity factors at the deterministic optimum.
    Sensitivities {
        #[command(flatten)]
        case: CaseArgs,
        #[command(flatten)]
        unc: UncArgs,
        /// Also compare against finite differences with this step.
        #[arg(long)]
        fd_step: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Failure with its process exit code.
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e.root() {
            Error::PowerFlowDiverged { .. } | Error::SingularJacobian => 1,
            Error::OpfFailed { status, .. } => {
                if *status == SolverStatus::Infeasible {
                    3
                } else {
                    1
                }
            }
            Error::InfeasibleBounds(_) => 3,
            Error::TooManyDiverged { .. } => 1,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure {
                code: 2,
                message: format!("thread pool: {e}"),
            })?;
    }
    match cli.command {
        Command::Pf {
            case,
            flat_start,
            out,
        } => commands::pf(&case, flat_start, out.as_deref()),
        Command::Opf { case, margins, out } => {
            commands::opf(&case, margins.as_deref(), out.as_deref())
        }
        Command::Solve {
            case,
            unc,
            crit,
            engine,
            samples,
            out_dir,
        } => commands::solve(&case, &unc, &crit, engine, samples, &out_dir),
        Command::Validate {
            case,
            unc,
            report,
            samples,
            kind,
            out_dir,
        } => commands::validate(&case, &unc, &report, samples, kind, &out_dir),
        Command::Compare {
            case,
            unc,
            crit,
            engines,
            samples,
            eval_samples,
            eval_kind,
            out_dir,
        } => commands::compare(
            &case,
            &unc,
            &crit,
            &engines,
            samples,
            eval_samples,
            eval_kind,
            &out_dir,
        ),
        Command::Sweep {
            case,
            unc,
            crit,
            grid,
            samples,
            out_dir,
        } => commands::sweep(&case, &unc, &crit, &grid, samples, &out_dir),
        Command::Sensitivities {
            case,
            unc,
            fd_step,
            out,
        } => commands::sensitivities(&case, &unc, fd_step, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
