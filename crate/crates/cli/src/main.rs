use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lflctr_cli::commands::{self, EvaluateArgs, SequentialArgs, SweepArgs, TrainArgs};
use lflctr_cli::error::{CliError, CliResult};

/// Click-through-rate prediction with latent factor log-linear models.
#[derive(Parser, Debug)]
#[command(name = "lflctr", version)]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic event log with a known ground-truth model.
    Synth {
        /// Generator settings (`key = value` lines).
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model on every event matched by a glob.
    Train {
        /// Glob for the training log files.
        #[arg(long)]
        data: String,
        #[arg(long)]
        schema: Option<PathBuf>,
        /// Hyperparameter file.
        #[arg(long)]
        hyper: Option<PathBuf>,
        /// Model to continue from.
        #[arg(long)]
        warm_start: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score test logs and write per-banner metrics and daily summaries.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: String,
        /// Minimum clicks per banner and day, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "1,10")]
        min_clicks: Vec<u64>,
        /// Output directory for metrics.csv and summary.csv.
        #[arg(long)]
        out: PathBuf,
        /// Model to report deltas against.
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Staged hyperparameter search validated on the day after the first window.
    Sweep {
        #[arg(long)]
        data: String,
        #[arg(long)]
        schema: Option<PathBuf>,
        /// Grid and base settings file.
        #[arg(long)]
        grids: PathBuf,
        /// Output CSV.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Rolling-window training with next-day evaluation.
    Sequential {
        #[arg(long)]
        data: String,
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long)]
        hyper: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "1,10")]
        min_clicks: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::usage("--threads", e))?;
    }
    match cli.command {
        Command::Synth { config, out, seed } => {
            let files = commands::synth(&config, &out, seed)?;
            log::info!("wrote {} files to {}", files.len(), out.display());
        }
        Command::Train {
            data,
            schema,
            hyper,
            warm_start,
            out,
            seed,
        } => {
            commands::train(&TrainArgs {
                data: &data,
                schema: schema.as_deref(),
                hyper: hyper.as_deref(),
                warm_start: warm_start.as_deref(),
                out: &out,
                seed,
            })?;
            log::info!("saved {}", out.display());
        }
        Command::Evaluate {
            model,
            data,
            min_clicks,
            out,
            baseline,
            seed,
        } => {
            commands::evaluate(&EvaluateArgs {
                model: &model,
                data: &data,
                min_clicks: &min_clicks,
                out: &out,
                baseline: baseline.as_deref(),
                seed,
            })?;
        }
        Command::Sweep {
            data,
            schema,
            grids,
            out,
            seed,
        } => {
            commands::sweep(&SweepArgs {
                data: &data,
                schema: schema.as_deref(),
                grids: &grids,
                out: &out,
                seed,
            })?;
        }
        Command::Sequential {
            data,
            schema,
            hyper,
            min_clicks,
            out,
            seed,
        } => {
            commands::sequential(&SequentialArgs {
                data: &data,
                schema: schema.as_deref(),
                hyper: hyper.as_deref(),
                min_clicks: &min_clicks,
                out: &out,
                seed,
            })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
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
