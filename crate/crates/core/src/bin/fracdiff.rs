use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fracdiff::config::{ExperimentConfig, Mode};
use fracdiff::harness::{run_forward, run_inverse, run_mlcheck, run_refine, RunArtifacts};
use fracdiff::Error;

/// Worker threads for the solver pool; unset or 0 lets rayon decide.
const THREADS_ENV: &str = "FRACDIFF_THREADS";

#[derive(Parser)]
#[command(name = "fracdiff", version, about = "Nonlocal fractional diffusion solver and coefficient recovery")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the forward problem.
    Forward {
        #[arg(long)]
        config: PathBuf,
    },
    /// Recover k(t) from a point trace.
    Inverse {
        #[arg(long)]
        config: PathBuf,
        /// CSV with columns t,h on the configured grid; synthesized from k_true when absent.
        #[arg(long)]
        observation: Option<PathBuf>,
    },
    /// Grid-refinement study.
    Refine {
        #[arg(long)]
        config: PathBuf,
    },
    /// Mittag-Leffler value, bound and identity checks.
    Mlcheck {
        #[arg(long)]
        config: PathBuf,
    },
}

fn init_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| format!("{THREADS_ENV}={raw} is not a thread count"))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<RunArtifacts, Error> {
    match cli.command {
        Command::Forward { config } => run_forward(&ExperimentConfig::load(&config, Mode::Forward)?),
        Command::Inverse { config, observation } => {
            run_inverse(&ExperimentConfig::load(&config, Mode::Inverse)?, observation.as_deref())
        }
        Command::Refine { config } => run_refine(&ExperimentConfig::load(&config, Mode::Refine)?),
        Command::Mlcheck { config } => run_mlcheck(&ExperimentConfig::load(&config, Mode::Mlcheck)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match run(cli) {
        Ok(art) => {
            for p in art.csv.iter().chain(std::iter::once(&art.json)) {
                println!("{}", p.display());
            }
            if art.exit_status != 0 {
                eprintln!("error: solver did not converge; see {}", art.json.display());
            }
            ExitCode::from(art.exit_status as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
