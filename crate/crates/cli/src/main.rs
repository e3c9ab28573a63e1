//! `nreadout`: simulate and analyze single-shot nuclear-spin readout.

mod batch_io;
mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nuclear_readout::analysis::{ReadoutMode, ScenarioOverrides};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Raw,
    Conditional,
    DualStep,
}

impl From<ModeArg> for ReadoutMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Raw => ReadoutMode::Raw,
            ModeArg::Conditional => ReadoutMode::Conditional,
            ModeArg::DualStep => ReadoutMode::DualStep,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "nreadout", version, about = "Single-shot nuclear-spin readout simulator")]
struct Cli {
    /// Config file, or `default` for the built-in profile.
    #[arg(long, global = true, env = "NREADOUT_CONFIG", default_value = "default")]
    config: String,
    /// Master seed.
    #[arg(long, global = true, env = "NREADOUT_SEED")]
    seed: Option<u64>,
    /// Shots per prepared state.
    #[arg(long, global = true, env = "NREADOUT_SHOTS")]
    shots: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, env = "NREADOUT_OUT")]
    out: Option<PathBuf>,
    /// Readout scheme to simulate or analyze.
    #[arg(long, global = true, env = "NREADOUT_MODE", value_enum)]
    mode: Option<ModeArg>,
    /// Store per-cycle photon counts in batch files.
    #[arg(long, global = true, env = "NREADOUT_FULL_CYCLES")]
    full_cycles: bool,
    /// Print the effective configuration as JSON and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate both preparations and write JSON-lines batches.
    Simulate,
    /// Classify batches and write fidelity reports and histograms.
    Analyze {
        /// Up-prepared batch (default: <out>/batch_up.jsonl).
        #[arg(long)]
        up: Option<PathBuf>,
        /// Down-prepared batch (default: <out>/batch_dn.jsonl).
        #[arg(long)]
        dn: Option<PathBuf>,
    },
    /// Fit the per-cycle flip probability to a detection curve.
    FitFlip {
        /// Batch written with --full-cycles; simulated when absent.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 500)]
        cycles: u32,
        /// Dark-to-bright flip probability of the simulated batch.
        #[arg(long, default_value_t = 0.0)]
        flip_db: f64,
    },
    /// Calibrate the shot model against the configured fit targets.
    FitModel,
    /// Synthesize the post-initialization ODMR spectrum.
    Odmr {
        /// Nuclear up population (default: the configured init fidelity).
        #[arg(long)]
        p_up: Option<f64>,
        /// Half-width of the frequency grid in MHz.
        #[arg(long, default_value_t = 15.0)]
        span: f64,
        #[arg(long, default_value_t = 0.01)]
        step: f64,
    },
    /// Propagate optical pumping and write the population curve.
    Pump {
        /// Fit the pump rates before propagating.
        #[arg(long)]
        fit: bool,
        #[arg(long, default_value_t = 3.0)]
        duration_us: f64,
    },
    /// Find the photon-count cutoff with the best average fidelity.
    OptimizeThreshold {
        #[arg(long)]
        up: Option<PathBuf>,
        #[arg(long)]
        dn: Option<PathBuf>,
    },
    /// Project fidelity and duration under modified parameters.
    Scenario {
        /// Multiply the bright photon rate per cycle.
        #[arg(long)]
        lambda_bright_scale: Option<f64>,
        /// Multiply both nuclear flip probabilities.
        #[arg(long)]
        flip_scale: Option<f64>,
        /// Background photons per cycle.
        #[arg(long)]
        lambda_dark: Option<f64>,
        /// Nuclear initialization error.
        #[arg(long)]
        init_error: Option<f64>,
        /// Probability that the defect is optically inactive.
        #[arg(long)]
        charge_error: Option<f64>,
        /// Readout cycles.
        #[arg(long)]
        cycles: Option<u32>,
        /// Longest allowed readout in µs; the cycle count is cut to fit.
        #[arg(long)]
        budget_us: Option<f64>,
    },
    /// Run the full calibration and readout pipeline and print a summary.
    #[command(alias = "reproduce")]
    ReproducePaper,
}

fn effective_config(cli: &Cli) -> CliResult<RunConfig> {
    let (mut config, _) = RunConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(shots) = cli.shots {
        config.shots = shots;
    }
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }
    if cli.full_cycles {
        config.full_cycles = true;
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> CliResult<()> {
    let config = effective_config(&cli)?;
    if cli.print_config {
        println!("{}", config.to_json());
        return Ok(());
    }
    let mode = cli.mode.map(ReadoutMode::from);
    let Some(command) = cli.command else {
        return Err(CliError::Usage(
            "no subcommand given; see `nreadout --help`".into(),
        ));
    };
    match command {
        Command::Simulate => commands::simulate(&config, mode),
        Command::Analyze { up, dn } => commands::analyze(&config, mode, up, dn),
        Command::FitFlip {
            input,
            cycles,
            flip_db,
        } => commands::fit_flip(
            &config,
            commands::FitFlipArgs {
                input,
                cycles,
                flip_db,
            },
        ),
        Command::FitModel => commands::fit_model(&config),
        Command::Odmr { p_up, span, step } => {
            commands::odmr(&config, commands::OdmrArgs { p_up, span, step })
        }
        Command::Pump { fit, duration_us } => commands::pump(&config, fit, duration_us),
        Command::OptimizeThreshold { up, dn } => commands::threshold(&config, up, dn),
        Command::Scenario {
            lambda_bright_scale,
            flip_scale,
            lambda_dark,
            init_error,
            charge_error,
            cycles,
            budget_us,
        } => commands::scenario_cmd(
            &config,
            ScenarioOverrides {
                lambda_bright_scale,
                flip_scale,
                lambda_dark,
                nuclear_init_error: init_error,
                charge_error,
                cycles,
                readout_budget_us: budget_us,
            },
        ),
        Command::ReproducePaper => commands::reproduce(&config).map(|_| ()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
