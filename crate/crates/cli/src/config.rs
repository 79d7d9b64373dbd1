//! Run configuration: TOML file sections, flag overrides, and resolution.
//!
//! Precedence is total: flag > config file > built-in default. Unknown keys
//! in the file are rejected so a typo cannot silently change an experiment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use cotstream_core::dataset::TaskKind;
use cotstream_core::stream::ReportFormat;
use cotstream_core::strategies::{StrategyConfig, StrategyKind};

use crate::AppError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub dataset: Option<DatasetSection>,
    pub stream: Option<StreamSection>,
    pub strategy: Option<StrategySection>,
    pub backend: Option<BackendSection>,
    pub output: Option<OutputSection>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub path: Option<String>,
    pub task: Option<String>,
    pub limit: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamSection {
    pub batches: Option<usize>,
    pub budget_tokens: Option<usize>,
    pub seed: Option<u64>,
    pub update_after_final: Option<bool>,
    pub max_tokens: Option<usize>,
    pub temperature: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySection {
    pub kind: Option<String>,
    pub xi: Option<usize>,
    pub demo_cap: Option<usize>,
    pub wrong_attempts: Option<usize>,
    pub wrong_temperature: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    pub kind: Option<String>,
    pub model_id: Option<String>,
    pub cache_path: Option<String>,
    pub in_flight: Option<usize>,
    pub mock: Option<MockSection>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockSection {
    pub correct_base: Option<f64>,
    pub shallow_bonus: Option<f64>,
    pub wrong_penalty: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub path: Option<String>,
    pub format: Option<String>,
}

/// Flag-level overrides for `run`; every field beats the file value.
#[derive(Debug, Default)]
pub struct Overrides {
    pub dataset: Option<PathBuf>,
    pub task: Option<String>,
    pub limit: Option<usize>,
    pub batches: Option<usize>,
    pub strategy: Option<String>,
    pub xi: Option<usize>,
    pub demo_cap: Option<usize>,
    pub budget: Option<usize>,
    pub backend: Option<String>,
    pub cache: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub format: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Mock,
    Http,
    CachedHttp,
}

impl BackendKind {
    fn parse(s: &str) -> Result<Self, AppError> {
        match s {
            "mock" => Ok(BackendKind::Mock),
            "http" => Ok(BackendKind::Http),
            "cached:http" => Ok(BackendKind::CachedHttp),
            other => Err(AppError::validation(format!(
                "unknown backend '{other}' (expected mock, http, or cached:http)"
            ))),
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            BackendKind::Mock => "mock",
            BackendKind::Http => "http",
            BackendKind::CachedHttp => "cached:http",
        }
    }
}

/// Fully resolved run configuration; serialized into reports and dumped by
/// `--print-config`.
#[derive(Debug, Clone, Serialize)]
pub struct ResolvedConfig {
    pub dataset: ResolvedDataset,
    pub stream: ResolvedStream,
    pub strategy: StrategyConfig,
    pub backend: ResolvedBackend,
    pub output: ResolvedOutput,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResolvedDataset {
    pub path: String,
    pub task: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResolvedStream {
    pub batches: usize,
    pub budget_tokens: usize,
    pub seed: u64,
    pub update_after_final: bool,
    pub max_tokens: usize,
    pub temperature: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResolvedBackend {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_path: Option<String>,
    pub in_flight: usize,
    pub mock: ResolvedMock,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResolvedMock {
    pub correct_base: f64,
    pub shallow_bonus: f64,
    pub wrong_penalty: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResolvedOutput {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    pub format: String,
}

impl ResolvedConfig {
    pub fn task(&self) -> TaskKind {
        self.dataset.task.parse().expect("validated at resolution")
    }

    pub fn backend_kind(&self) -> BackendKind {
        BackendKind::parse(&self.backend.kind).expect("validated at resolution")
    }

    pub fn format(&self) -> ReportFormat {
        self.output.format.parse().expect("validated at resolution")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("resolved config serializes")
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("resolved config serializes")
    }
}

pub fn load_file(path: &Path) -> Result<FileConfig, AppError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| AppError::validation(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text)
        .map_err(|e| AppError::validation(format!("config {}: {e}", path.display())))
}

/// Applies precedence and validates every field.
pub fn resolve(file: FileConfig, flags: Overrides) -> Result<ResolvedConfig, AppError> {
    let dataset_section = file.dataset.unwrap_or_default();
    let stream_section = file.stream.unwrap_or_default();
    let strategy_section = file.strategy.unwrap_or_default();
    let backend_section = file.backend.unwrap_or_default();
    let mock_section = backend_section.mock.unwrap_or_default();
    let output_section = file.output.unwrap_or_default();

    let dataset_path = flags
        .dataset
        .map(|p| p.display().to_string())
        .or(dataset_section.path)
        .ok_or_else(|| {
            AppError::validation(
                "no dataset given; pass --dataset <path> or set [dataset].path in --config <file>",
            )
        })?;
    if !Path::new(&dataset_path).exists() {
        return Err(AppError::validation(format!(
            "dataset file not found: {dataset_path}"
        )));
    }

    let task_name = flags
        .task
        .or(dataset_section.task)
        .ok_or_else(|| AppError::validation("no task given; pass --task or set [dataset].task"))?;
    let task: TaskKind = task_name.parse().map_err(AppError::validation)?;

    let strategy_name = flags
        .strategy
        .or(strategy_section.kind)
        .unwrap_or_else(|| "concat".to_string());
    let kind: StrategyKind = strategy_name.parse().map_err(AppError::validation)?;
    let defaults = StrategyConfig::default();
    let strategy = StrategyConfig {
        kind,
        xi: flags.xi.or(strategy_section.xi).unwrap_or(defaults.xi),
        demo_cap: flags
            .demo_cap
            .or(strategy_section.demo_cap)
            .unwrap_or(defaults.demo_cap),
        wrong_attempts: strategy_section
            .wrong_attempts
            .unwrap_or(defaults.wrong_attempts),
        wrong_temperature: strategy_section
            .wrong_temperature
            .unwrap_or(defaults.wrong_temperature),
    };
    strategy.validate().map_err(AppError::validation)?;

    let batches = flags.batches.or(stream_section.batches).unwrap_or(10);
    if batches < 1 {
        return Err(AppError::validation("batches must be at least 1"));
    }
    let budget_tokens = flags
        .budget
        .or(stream_section.budget_tokens)
        .unwrap_or(cotstream_core::prompting::DEFAULT_BUDGET_TOKENS);
    if budget_tokens < 16 {
        return Err(AppError::validation("budget must be at least 16 tokens"));
    }

    let backend_kind = BackendKind::parse(
        &flags
            .backend
            .or(backend_section.kind)
            .unwrap_or_else(|| "mock".to_string()),
    )?;
    let cache_path = flags
        .cache
        .map(|p| p.display().to_string())
        .or(backend_section.cache_path);
    if backend_kind == BackendKind::CachedHttp && cache_path.is_none() {
        return Err(AppError::validation(
            "cached:http backend needs a cache file; pass --cache <path> or set [backend].cache_path",
        ));
    }
    let model_id = backend_section.model_id;
    if backend_kind != BackendKind::Mock && model_id.is_none() {
        return Err(AppError::validation(
            "http backends need [backend].model_id in the config file",
        ));
    }

    let format_name = flags
        .format
        .or(output_section.format)
        .unwrap_or_else(|| "json".to_string());
    let _: ReportFormat = format_name.parse().map_err(AppError::validation)?;

    let resolved = ResolvedConfig {
        dataset: ResolvedDataset {
            path: dataset_path,
            task: task.to_string(),
            limit: flags.limit.or(dataset_section.limit),
        },
        stream: ResolvedStream {
            batches,
            budget_tokens,
            seed: flags.seed.or(stream_section.seed).unwrap_or(0),
            update_after_final: stream_section.update_after_final.unwrap_or(false),
            max_tokens: stream_section
                .max_tokens
                .unwrap_or(cotstream_core::backend::DEFAULT_MAX_TOKENS),
            temperature: stream_section.temperature.unwrap_or(0.0),
        },
        strategy,
        backend: ResolvedBackend {
            kind: backend_kind.as_str().to_string(),
            model_id,
            cache_path,
            in_flight: backend_section.in_flight.unwrap_or(4),
            mock: ResolvedMock {
                correct_base: mock_section.correct_base.unwrap_or(0.6),
                shallow_bonus: mock_section.shallow_bonus.unwrap_or(0.2),
                wrong_penalty: mock_section.wrong_penalty.unwrap_or(0.1),
            },
        },
        output: ResolvedOutput {
            path: flags.out.map(|p| p.display().to_string()).or(output_section.path),
            format: format_name,
        },
    };
    Ok(resolved)
}
