use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use redpanda_core::model::Mode;
use redpanda_core::runner::{self, ExperimentConfig};

#[derive(Parser)]
#[command(name = "redpanda", version, about = "Nuisance-invariant anomaly detection pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_parser = parse_mode)]
    mode: Mode,
    #[arg(long)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic benchmark (or validate a manifest) and print role counts.
    Generate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train one run; writes model.rpck and losses.csv.
    Train(RunArgs),
    /// Score the test samples with a trained run; writes scores.csv.
    Score(RunArgs),
    /// Compute AD/PA/RA from a run's scores; writes report.json and report.txt.
    Evaluate(RunArgs),
    /// Mean ± std per mode across run directories (or output roots).
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Every stage for all configured modes and seeds, then the report.
    All {
        #[arg(long)]
        config: PathBuf,
    },
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: redpanda_core::Error| e.to_string())
}

fn run(cli: Cli) -> redpanda_core::Result<()> {
    match cli.command {
        Command::Generate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = runner::generate(&cfg)?;
            let verb = if out.reused { "reused" } else { "wrote" };
            println!("{verb} {}", out.dir.display());
            println!("{}", out.counts);
            println!("dataset_hash={}", out.dataset_hash);
        }
        Command::Train(a) => {
            let cfg = ExperimentConfig::load(&a.config)?;
            let out = runner::train_run(&cfg, a.mode, a.seed)?;
            let verb = if out.reused { "up to date" } else { "wrote" };
            println!("{verb} {}", out.checkpoint.display());
        }
        Command::Score(a) => {
            let cfg = ExperimentConfig::load(&a.config)?;
            println!("wrote {}", runner::score_run(&cfg, a.mode, a.seed)?.display());
        }
        Command::Evaluate(a) => {
            let cfg = ExperimentConfig::load(&a.config)?;
            println!("{}", runner::evaluate_run(&cfg, a.mode, a.seed)?);
        }
        Command::Report { dirs, csv } => {
            let summary = runner::summarize(&dirs)?;
            print!("{summary}");
            if let Some(path) = csv {
                std::fs::write(path, summary.to_csv())?;
            }
        }
        Command::All { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            print!("{}", runner::run_all(&cfg)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
