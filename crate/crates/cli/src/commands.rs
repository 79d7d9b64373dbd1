//! The run, simulate, and report subcommands.

use std::path::{Path, PathBuf};

use cotstream_core::backend::synthetic::arithmetic_dataset;
use cotstream_core::backend::{Backend, CacheBackend, HttpBackend, MockBackend, MockScript};
use cotstream_core::dataset::load_dataset;
use cotstream_core::stream::{run_stream, write_report, ReportFormat, RunReport, StreamError, StreamParams};
use cotstream_core::strategies::{StrategyConfig, StrategyKind};

use crate::config::{BackendKind, ResolvedConfig};
use crate::AppError;

fn build_backend(config: &ResolvedConfig) -> Result<Box<dyn Backend>, AppError> {
    match config.backend_kind() {
        BackendKind::Mock => {
            let script = MockScript {
                seed: config.stream.seed,
                correct_base: config.backend.mock.correct_base,
                shallow_bonus: config.backend.mock.shallow_bonus,
                wrong_penalty: config.backend.mock.wrong_penalty,
                ..MockScript::default()
            };
            Ok(Box::new(MockBackend::new(script)))
        }
        BackendKind::Http => Ok(Box::new(http_backend(config)?)),
        BackendKind::CachedHttp => {
            let path = config
                .backend
                .cache_path
                .as_ref()
                .expect("validated at resolution");
            let cache = CacheBackend::open(Box::new(http_backend(config)?), path)
                .map_err(|e| AppError::validation(e.to_string()))?;
            Ok(Box::new(cache))
        }
    }
}

fn http_backend(config: &ResolvedConfig) -> Result<HttpBackend, AppError> {
    let model_id = config
        .backend
        .model_id
        .as_ref()
        .expect("validated at resolution");
    Ok(HttpBackend::from_env(model_id.clone())
        .map_err(|e| AppError::validation(e.to_string()))?
        .with_in_flight(config.backend.in_flight))
}

pub fn run(config: ResolvedConfig, print_config: bool) -> Result<(), AppError> {
    if print_config {
        print!("{}", config.to_toml());
        return Ok(());
    }

    let dataset = load_dataset(&config.dataset.path, config.task(), config.dataset.limit)
        .map_err(|e| AppError::validation(e.to_string()))?;
    let backend = build_backend(&config)?;

    let params = StreamParams {
        batches: config.stream.batches,
        strategy: config.strategy.clone(),
        budget_tokens: config.stream.budget_tokens,
        seed: config.stream.seed,
        update_after_final: config.stream.update_after_final,
        eval: cotstream_core::stream::EvalOptions {
            max_tokens: config.stream.max_tokens,
            temperature: config.stream.temperature,
        },
        config_snapshot: Some(config.to_value()),
    };

    let report = run_stream(&dataset, &backend, &params).map_err(|e| match e {
        StreamError::Dataset(inner) => AppError::validation(inner.to_string()),
        other => AppError::runtime(other.to_string()),
    })?;

    let format = config.format();
    match &config.output.path {
        Some(path) => {
            write_report(&report, path, format).map_err(|e| AppError::runtime(e.to_string()))?;
            for m in &report.metrics {
                println!(
                    "batch {:>2}: accuracy {:.4} ({}/{}) prompt demos {}",
                    m.batch_index, m.accuracy, m.n_correct, m.n, m.prompt_stats_before.n_demos
                );
            }
            println!(
                "total: accuracy {:.4} ({}/{}) -> {}",
                report.totals.accuracy, report.totals.n_correct, report.totals.n, path
            );
        }
        None => {
            let body = match format {
                ReportFormat::Json => report.to_json_string(),
                ReportFormat::Csv => report.to_csv_string(),
            };
            print!("{body}");
        }
    }
    eprintln!("wall clock: {:?}", report.wall_clock);

    if let Some(batch) = report.aborted_at_batch {
        return Err(AppError::runtime(format!(
            "run aborted at batch {batch}: {}",
            report.abort_message.as_deref().unwrap_or("unknown failure")
        )));
    }
    Ok(())
}

pub struct SimulateOptions {
    pub seeds: (u64, u64),
    pub strategies: Vec<StrategyKind>,
    pub batches: usize,
    pub batch_size: usize,
    pub xi: usize,
    pub demo_cap: usize,
    pub budget: usize,
    pub out: Option<PathBuf>,
}

/// Parses the `a..b` half-open seed range syntax.
pub fn parse_seed_range(s: &str) -> Result<(u64, u64), AppError> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| AppError::validation(format!("seed range '{s}' must look like 0..30")))?;
    let start: u64 = a
        .trim()
        .parse()
        .map_err(|_| AppError::validation(format!("bad seed range start '{a}'")))?;
    let end: u64 = b
        .trim()
        .parse()
        .map_err(|_| AppError::validation(format!("bad seed range end '{b}'")))?;
    if end <= start {
        return Err(AppError::validation(format!(
            "seed range '{s}' is empty (end must exceed start)"
        )));
    }
    Ok((start, end))
}

pub fn parse_strategies(s: &str) -> Result<Vec<StrategyKind>, AppError> {
    let mut kinds = Vec::new();
    for token in s.split(',') {
        let token = token.trim();
        if token.is_empty() {
            continue;
        }
        kinds.push(token.parse::<StrategyKind>().map_err(AppError::validation)?);
    }
    if kinds.is_empty() {
        return Err(AppError::validation("no strategies given"));
    }
    Ok(kinds)
}

/// Runs the scripted mock across a seed range and emits an aggregate CSV of
/// per-batch accuracy mean/stddev per strategy.
pub fn simulate(options: SimulateOptions) -> Result<(), AppError> {
    let (start, end) = options.seeds;
    let n_seeds = (end - start) as usize;
    let mut rows = String::from("strategy,batch,mean_accuracy,stddev_accuracy,seeds\n");

    for kind in &options.strategies {
        // accuracies[batch][seed]
        let mut accuracies: Vec<Vec<f64>> = vec![Vec::with_capacity(n_seeds); options.batches];
        for seed in start..end {
            let dataset = arithmetic_dataset(seed, options.batch_size * options.batches);
            let backend = MockBackend::new(MockScript::seeded(seed));
            let strategy = StrategyConfig {
                kind: *kind,
                xi: options.xi,
                demo_cap: options.demo_cap,
                ..StrategyConfig::default()
            };
            let params = StreamParams::new(options.batches, strategy, options.budget, seed);
            let report = run_stream(&dataset, &backend, &params)
                .map_err(|e| AppError::runtime(e.to_string()))?;
            for m in &report.metrics {
                accuracies[m.batch_index - 1].push(m.accuracy);
            }
        }
        for (batch_idx, series) in accuracies.iter().enumerate() {
            let mean = series.iter().sum::<f64>() / series.len() as f64;
            let stddev = if series.len() < 2 {
                0.0
            } else {
                let var = series.iter().map(|a| (a - mean).powi(2)).sum::<f64>()
                    / (series.len() - 1) as f64;
                var.sqrt()
            };
            rows.push_str(&format!(
                "{},{},{:.4},{:.4},{}\n",
                kind,
                batch_idx + 1,
                mean,
                stddev,
                series.len()
            ));
        }
    }

    match &options.out {
        Some(path) => std::fs::write(path, rows).map_err(|e| AppError::runtime(e.to_string()))?,
        None => print!("{rows}"),
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportOutputFormat {
    Csv,
    Long,
}

impl ReportOutputFormat {
    pub fn parse(s: &str) -> Result<Self, AppError> {
        match s {
            "csv" => Ok(ReportOutputFormat::Csv),
            "long" => Ok(ReportOutputFormat::Long),
            other => Err(AppError::validation(format!(
                "unknown report output format '{other}' (expected csv or long)"
            ))),
        }
    }
}

/// Converts a JSON report to per-batch CSV or a plot-ready long table
/// (`strategy,batch,metric,value`).
pub fn convert_report(
    input: &Path,
    format: ReportOutputFormat,
    out: Option<&Path>,
) -> Result<(), AppError> {
    let text = std::fs::read_to_string(input)
        .map_err(|e| AppError::validation(format!("cannot read report {}: {e}", input.display())))?;
    let report = RunReport::from_json_str(&text)
        .map_err(|e| AppError::validation(format!("report {}: {e}", input.display())))?;

    let body = match format {
        ReportOutputFormat::Csv => report.to_csv_string(),
        ReportOutputFormat::Long => {
            let mut rows = String::from("strategy,batch,metric,value\n");
            for m in &report.metrics {
                let strategy = m.strategy_kind;
                let entries: [(&str, String); 7] = [
                    ("accuracy", format!("{:.4}", m.accuracy)),
                    ("n", m.n.to_string()),
                    ("n_correct", m.n_correct.to_string()),
                    ("prompt_demos", m.prompt_stats_before.n_demos.to_string()),
                    (
                        "prompt_wrong_fraction",
                        format!("{:.4}", m.prompt_stats_before.wrong_fraction),
                    ),
                    (
                        "prompt_mean_depth",
                        format!("{:.4}", m.prompt_stats_before.mean_newline_depth),
                    ),
                    ("prompt_tokens", m.prompt_stats_before.token_total.to_string()),
                ];
                for (metric, value) in entries {
                    rows.push_str(&format!("{strategy},{},{metric},{value}\n", m.batch_index));
                }
            }
            rows
        }
    };

    match out {
        Some(path) => std::fs::write(path, body).map_err(|e| AppError::runtime(e.to_string()))?,
        None => print!("{body}"),
    }
    Ok(())
}
