use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use drlsvi::runner::{cmd_evaluate, cmd_oracle, cmd_sweep, cmd_train, ExperimentConfig};
use drlsvi::{Error, Result};

#[derive(Parser)]
#[command(name = "drlsvi", version, about = "Distributionally robust LSVI-UCB experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train agents on the source domain and save their final policies.
    Train(Common),
    /// Evaluate saved policies on the target sweep.
    Evaluate(Common),
    /// Exact value tables for the source and every target.
    Oracle(Common),
    /// Train and evaluate every (seed, agent) cell and summarize.
    Sweep(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated seed list overriding the config.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    jobs: Option<usize>,
}

fn load(args: &Common) -> Result<ExperimentConfig> {
    let cfg = ExperimentConfig::load(&args.config)?;
    match &args.seeds {
        Some(seeds) => cfg.with_seeds(seeds.clone()),
        None => Ok(cfg),
    }
}

fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Train(args) => {
            let cfg = load(&args)?;
            let artifacts = cmd_train(&cfg, &args.out, args.jobs)?;
            Ok(format!("trained {} policies into {}", artifacts.len(), args.out.display()))
        }
        Command::Evaluate(args) => {
            let cfg = load(&args)?;
            let rows = cmd_evaluate(&cfg, &args.out, args.jobs)?;
            Ok(format!("wrote {} rows to {}", rows.len(), args.out.join("results.csv").display()))
        }
        Command::Oracle(args) => {
            let cfg = load(&args)?;
            let index = cmd_oracle(&cfg, &args.out)?;
            Ok(format!("wrote {} value tables to {}", index.len(), args.out.join("oracle").display()))
        }
        Command::Sweep(args) => {
            let cfg = load(&args)?;
            let out = cmd_sweep(&cfg, &args.out, args.jobs)?;
            Ok(format!("wrote {} rows to {}", out.rows.len(), args.out.join("results.csv").display()))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            let code: u8 = if err.is_config() { 2 } else { 3 };
            let kind = match &err {
                Error::Config(_) => "config",
                Error::Io(_) => "io",
                Error::Coverage(_) => "coverage",
                Error::MissingOracle(_) => "missing_input",
                _ => "runtime",
            };
            let doc = serde_json::json!({ "error": kind, "message": err.to_string(), "exit_code": code });
            eprintln!("{doc}");
            ExitCode::from(code)
        }
    }
}
