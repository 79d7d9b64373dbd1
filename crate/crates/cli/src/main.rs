//! `cotstream`: run streaming prompt-update experiments, simulate strategies
//! with the scripted mock, and post-process reports.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use commands::{convert_report, parse_seed_range, parse_strategies, ReportOutputFormat, SimulateOptions};
use config::{load_file, resolve, FileConfig, Overrides};

/// Validation failures exit 1; runtime aborts exit 2.
#[derive(Debug)]
pub enum AppError {
    Validation(String),
    Runtime(String),
}

impl AppError {
    pub fn validation(message: impl Into<String>) -> Self {
        AppError::Validation(message.into())
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        AppError::Runtime(message.into())
    }
}

#[derive(Parser)]
#[command(
    name = "cotstream",
    version,
    about = "Streaming chain-of-thought prompting harness",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a stream run from a config file and/or flags.
    Run(RunArgs),
    /// Sweep strategies over seeded mock runs and emit an aggregate CSV.
    Simulate(SimulateArgs),
    /// Convert a JSON run report to CSV or a plot-ready long table.
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Task kind: arithmetic, yesno, or symbolic.
    #[arg(long)]
    task: Option<String>,
    /// Keep only the first N records of the dataset.
    #[arg(long)]
    limit: Option<usize>,
    /// Number of stream batches (m).
    #[arg(long)]
    batches: Option<usize>,
    /// zero-shot, concat, correct-only, wrong-substitute, shallow, or deep.
    #[arg(long)]
    strategy: Option<String>,
    /// Depth threshold for shallow/deep classification.
    #[arg(long)]
    xi: Option<usize>,
    #[arg(long = "demo-cap")]
    demo_cap: Option<usize>,
    /// Prompt token budget.
    #[arg(long)]
    budget: Option<usize>,
    /// mock, http, or cached:http.
    #[arg(long)]
    backend: Option<String>,
    /// Record/replay store for the cached:http backend.
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Report destination; without it the report body goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report format: json or csv.
    #[arg(long)]
    format: Option<String>,
    /// Dump the fully resolved configuration and exit.
    #[arg(long = "print-config", default_value_t = false)]
    print_config: bool,
}

#[derive(Args)]
struct SimulateArgs {
    /// Half-open seed range, e.g. 0..30.
    #[arg(long)]
    seeds: String,
    /// Comma-separated strategy list, e.g. shallow,deep.
    #[arg(long)]
    strategies: String,
    #[arg(long, default_value_t = 10)]
    batches: usize,
    #[arg(long = "batch-size", default_value_t = 40)]
    batch_size: usize,
    #[arg(long, default_value_t = 3)]
    xi: usize,
    #[arg(long = "demo-cap", default_value_t = 8)]
    demo_cap: usize,
    #[arg(long, default_value_t = 2048)]
    budget: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// JSON run report to convert.
    input: PathBuf,
    /// csv (per-batch table) or long (strategy,batch,metric,value).
    #[arg(long, default_value = "csv")]
    format: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn dispatch(cli: Cli) -> Result<(), AppError> {
    match cli.command {
        Command::Run(args) => {
            let file = match &args.config {
                Some(path) => load_file(path)?,
                None => FileConfig::default(),
            };
            let overrides = Overrides {
                dataset: args.dataset,
                task: args.task,
                limit: args.limit,
                batches: args.batches,
                strategy: args.strategy,
                xi: args.xi,
                demo_cap: args.demo_cap,
                budget: args.budget,
                backend: args.backend,
                cache: args.cache,
                seed: args.seed,
                out: args.out,
                format: args.format,
            };
            let resolved = resolve(file, overrides)?;
            commands::run(resolved, args.print_config)
        }
        Command::Simulate(args) => commands::simulate(SimulateOptions {
            seeds: parse_seed_range(&args.seeds)?,
            strategies: parse_strategies(&args.strategies)?,
            batches: args.batches,
            batch_size: args.batch_size,
            xi: args.xi,
            demo_cap: args.demo_cap,
            budget: args.budget,
            out: args.out,
        }),
        Command::Report(args) => convert_report(
            &args.input,
            ReportOutputFormat::parse(&args.format)?,
            args.out.as_deref(),
        ),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            // Flag and subcommand mistakes are validation errors.
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(AppError::Validation(message)) => {
            eprintln!("error: {message}");
            eprintln!("usage: cotstream <run|simulate|report> --help for details");
            ExitCode::from(1)
        }
        Err(AppError::Runtime(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}
