use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use early_psd_cli::config::{ExperimentConfig, ExperimentKind};
use early_psd_cli::rows::write_csv;
use early_psd_cli::{acoustic, model, with_threads, CliError};

/// Early-PSD estimation experiments: model-based sweeps and the acoustic
/// pipeline, driven by a TOML config and emitting CSV tables.
#[derive(Parser)]
#[command(name = "early-psd", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for the CSV table (default: config's `out`, else
    /// the current directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config's base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's realization count.
    #[arg(long)]
    realizations: Option<usize>,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// PSD error versus the RETF perturbation level.
    EpsSweep(RunArgs),
    /// PSD error versus the soft-constraint penalty.
    AlphaSweep(RunArgs),
    /// PSD error versus frequency, with the collinearity diagnostic.
    FreqSweep(RunArgs),
    /// Per-iteration PSD error of the square-root solver.
    Convergence(RunArgs),
    /// Recursive RETF tracking with a direction change.
    Recursive(RunArgs),
    /// Time-domain pipeline with SIR/SAR/SDR per third-octave band.
    Acoustic(RunArgs),
}

impl Command {
    fn kind(&self) -> ExperimentKind {
        match self {
            Command::EpsSweep(_) => ExperimentKind::EpsSweep,
            Command::AlphaSweep(_) => ExperimentKind::AlphaSweep,
            Command::FreqSweep(_) => ExperimentKind::FreqSweep,
            Command::Convergence(_) => ExperimentKind::Convergence,
            Command::Recursive(_) => ExperimentKind::Recursive,
            Command::Acoustic(_) => ExperimentKind::Acoustic,
        }
    }

    fn args(&self) -> &RunArgs {
        match self {
            Command::EpsSweep(a)
            | Command::AlphaSweep(a)
            | Command::FreqSweep(a)
            | Command::Convergence(a)
            | Command::Recursive(a)
            | Command::Acoustic(a) => a,
        }
    }
}

fn run(cli: Cli) -> Result<PathBuf, CliError> {
    let kind = cli.command.kind();
    let args = cli.command.args();
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if cfg.experiment != kind {
        return Err(CliError::Config(format!(
            "config declares experiment '{}' but the subcommand is '{}'",
            cfg.experiment.as_str(),
            kind.as_str()
        )));
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(r) = args.realizations {
        cfg.realizations = r;
        cfg.validate()?;
    }

    let rows = with_threads(args.threads, || match kind {
        ExperimentKind::EpsSweep => model::run_eps_sweep(&cfg),
        ExperimentKind::AlphaSweep => model::run_alpha_sweep(&cfg),
        ExperimentKind::FreqSweep => model::run_freq_sweep(&cfg),
        ExperimentKind::Convergence => model::run_convergence(&cfg),
        ExperimentKind::Recursive => model::run_recursive(&cfg),
        ExperimentKind::Acoustic => acoustic::run_acoustic(&cfg),
    })??;

    let out_dir = args
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    let path = out_dir.join(format!("{}.csv", kind.as_str()));
    write_csv(&path, &rows)?;
    Ok(path)
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(path) => {
            println!("wrote {}", path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
