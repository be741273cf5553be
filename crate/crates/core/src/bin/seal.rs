use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use seal::config::ExperimentKind;
use seal::experiments::{self, ExpError, Options};

/// Stigmergic pattern formation, MARL baselines and AUIT experiments.
#[derive(Parser)]
#[command(name = "seal", version)]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Number of seeds, overriding the config.
    #[arg(long, global = true)]
    seeds: Option<usize>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the stigmergic engine once per seed.
    SealRun,
    /// Final similarity across sensing-noise levels.
    NoiseSweep,
    /// SEAL against IQL, HQL and LMRL.
    BaselineCompare,
    /// Anytime intelligence test over the complexity grid.
    AuitEval,
    /// Convert a frame file to a portable graymap.
    Render {
        /// Frame in pattern format with `A` cells.
        frame: PathBuf,
    },
}

fn execute(cli: Cli) -> Result<(), ExpError> {
    let opts = Options {
        out: cli.out.clone(),
        seeds: cli.seeds,
        jobs: cli.jobs,
    };
    let kind = match cli.command {
        Command::Render { frame } => {
            let path = experiments::render(&frame, cli.out.as_deref())?;
            eprintln!("wrote {}", path.display());
            return Ok(());
        }
        Command::SealRun => ExperimentKind::SealRun,
        Command::NoiseSweep => ExperimentKind::NoiseSweep,
        Command::BaselineCompare => ExperimentKind::BaselineCompare,
        Command::AuitEval => ExperimentKind::AuitEval,
    };
    let config = cli
        .config
        .ok_or_else(|| ExpError::Config("--config is required".into()))?;
    let prep = experiments::prepare(&config, &opts, kind)?;
    match kind {
        ExperimentKind::SealRun => {
            experiments::seal_run(&prep)?;
        }
        ExperimentKind::NoiseSweep => {
            experiments::noise_sweep(&prep)?;
        }
        ExperimentKind::BaselineCompare => {
            let (_, ordering) = experiments::baseline_compare(&prep)?;
            eprint!("{}", ordering.report());
        }
        ExperimentKind::AuitEval => {
            experiments::auit_eval(&prep)?;
        }
    }
    eprintln!("wrote {}", prep.out_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("seal: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
