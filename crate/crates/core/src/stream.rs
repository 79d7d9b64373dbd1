//! The streaming run loop: evaluate each batch under one prompt, grade,
//! apply the configured update, and emit the run report.

use std::path::Path;
use std::str::FromStr;
use std::sync::LazyLock;
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::{zero_shot_cot, Backend, BackendIdentity, CompletionRequest, STOP_SEQUENCE};
use crate::dataset::{partition, Batch, Dataset, DatasetError, TaskKind};
use crate::grading::{extract_answer, grade};
use crate::parallel;
use crate::prompting::{
    enforce_budget_for_questions, render_prompt, Demonstration, Prompt, PromptError, PromptStats,
};
use crate::rationale::{Rationale, RationaleOrigin};
use crate::strategies::{apply_strategy, StrategyConfig, StrategyError, StrategyKind};

static ANSWER_CLAUSE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)the answer is").expect("static regex"));

/// Request knobs shared by every evaluation call, recorded in reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub max_tokens: usize,
    pub temperature: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            max_tokens: crate::backend::DEFAULT_MAX_TOKENS,
            temperature: 0.0,
        }
    }
}

/// Everything `run_stream` needs besides the dataset and backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamParams {
    pub batches: usize,
    pub strategy: StrategyConfig,
    pub budget_tokens: usize,
    pub seed: u64,
    /// Apply the strategy after the final batch too (no later batch consumes
    /// the result); off by default.
    pub update_after_final: bool,
    pub eval: EvalOptions,
    /// Resolved configuration snapshot to embed in the report; when absent a
    /// snapshot is built from these parameters.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub config_snapshot: Option<serde_json::Value>,
}

impl StreamParams {
    pub fn new(batches: usize, strategy: StrategyConfig, budget_tokens: usize, seed: u64) -> Self {
        StreamParams {
            batches,
            strategy,
            budget_tokens,
            seed,
            update_after_final: false,
            eval: EvalOptions::default(),
            config_snapshot: None,
        }
    }
}

/// Per-batch accuracy and the composition of the prompt it ran under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchMetrics {
    pub batch_index: usize,
    pub n: usize,
    pub n_correct: usize,
    pub accuracy: f64,
    pub prompt_stats_before: PromptStats,
    pub strategy_kind: StrategyKind,
}

/// One evaluated sample in the audit trail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub sample_id: String,
    pub predicted: String,
    pub correct: bool,
    pub rationale_newlines: usize,
}

/// Demonstration metadata captured in prompt snapshots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoSnapshot {
    pub sample_id: String,
    pub batch_of_origin: usize,
    pub answer_text: String,
    pub correct: bool,
    pub newline_count: usize,
    pub token_estimate: usize,
}

/// Snapshot of the prompt in force for one batch, plus that batch's outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchAudit {
    pub batch_index: usize,
    pub prompt_hash: String,
    pub prompt_stats: PromptStats,
    pub prompt_demos: Vec<DemoSnapshot>,
    pub outcomes: Vec<SampleOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTotals {
    pub n: usize,
    pub n_correct: usize,
    pub accuracy: f64,
}

/// Full result of a stream run. Wall-clock time is kept in memory but left
/// out of the serialized form so identical seeded runs serialize identically.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub config: serde_json::Value,
    pub config_hash: String,
    pub backend: BackendIdentity,
    pub template: String,
    pub dataset_name: String,
    pub dataset_size: usize,
    pub batches_planned: usize,
    pub seed: u64,
    pub strategy: StrategyConfig,
    pub budget_tokens: usize,
    pub eval: EvalOptions,
    pub stop: Vec<String>,
    pub update_after_final: bool,
    /// One trailing newline is stripped from stage-1 completions before
    /// depth is measured; recorded here as run metadata.
    pub trailing_newline_stripped: bool,
    pub metrics: Vec<BatchMetrics>,
    pub audit: Vec<BatchAudit>,
    pub totals: RunTotals,
    pub aborted_at_batch: Option<usize>,
    pub abort_message: Option<String>,
    #[serde(skip, default)]
    pub wall_clock: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown report format '{other}' (expected json or csv)")),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StreamError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("report I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// A batch evaluation: graded demonstrations, metrics, and audit outcomes.
pub struct BatchEvaluation {
    pub demos: Vec<Demonstration>,
    pub metrics: BatchMetrics,
    pub outcomes: Vec<SampleOutcome>,
}

/// A backend failure mid-batch; outcomes for samples answered before the
/// failure are preserved.
#[derive(Debug)]
pub struct BatchAbort {
    pub outcomes: Vec<SampleOutcome>,
    pub message: String,
}

/// Drops the trailing "The answer is ..." clause a few-shot completion
/// imitates from the demonstrations, leaving the rationale body.
fn strip_answer_clause(completion: &str) -> &str {
    match ANSWER_CLAUSE.find_iter(completion).last() {
        Some(m) => completion[..m.start()].trim_end(),
        None => completion.trim_end(),
    }
}

/// Evaluates one batch under one prompt value.
///
/// Zero-demonstration prompts use the two-stage zero-shot procedure (two
/// backend calls per question); nonempty prompts use a single few-shot
/// completion per question with extraction on the completion. The same
/// prompt value serves every question in the batch.
pub fn evaluate_batch(
    batch: &Batch,
    prompt: &Prompt,
    backend: &dyn Backend,
    task: TaskKind,
    eval: &EvalOptions,
    strategy_kind: StrategyKind,
) -> Result<Result<BatchEvaluation, BatchAbort>, PromptError> {
    let questions: Vec<&str> = batch.samples.iter().map(|s| s.question.as_str()).collect();
    let active = enforce_budget_for_questions(prompt.clone(), &questions)?;
    let stats_before = active.stats();

    // Sampled decoding draws are keyed by request content; duplicate
    // questions running in parallel would race on them, so concurrent
    // evaluation is reserved for greedy decoding.
    let workers = if eval.temperature > 0.0 {
        1
    } else {
        backend.in_flight_limit()
    };
    type SampleResult = Result<(Rationale, String), crate::backend::BackendError>;
    let results = parallel::map_ordered(&batch.samples, workers, |_, sample| -> SampleResult {
        if active.is_empty() {
            let (rationale, answer_completion) =
                zero_shot_cot(sample, backend, eval.temperature, eval.max_tokens)?;
            let predicted = extract_answer(&answer_completion, task);
            Ok((rationale, predicted))
        } else {
            let request = CompletionRequest::new(
                render_prompt(&active, &sample.question),
                eval.max_tokens,
                eval.temperature,
                backend.model_id(),
            );
            let response = backend.complete(&request)?;
            let predicted = extract_answer(&response.text, task);
            let origin = if eval.temperature == 0.0 {
                RationaleOrigin::ZeroShotGreedy
            } else {
                RationaleOrigin::Sampled(eval.temperature)
            };
            let rationale = Rationale::new(strip_answer_clause(&response.text), origin);
            Ok((rationale, predicted))
        }
    });

    let mut demos = Vec::with_capacity(batch.samples.len());
    let mut outcomes = Vec::with_capacity(batch.samples.len());
    for (sample, result) in batch.samples.iter().zip(results) {
        match result {
            Ok((rationale, predicted)) => {
                let verdict = grade(&predicted, &sample.gold, task);
                outcomes.push(SampleOutcome {
                    sample_id: sample.id.clone(),
                    predicted: predicted.clone(),
                    correct: verdict.is_correct(),
                    rationale_newlines: rationale.newline_count,
                });
                demos.push(Demonstration {
                    sample_id: sample.id.clone(),
                    question: sample.question.clone(),
                    rationale,
                    answer_text: predicted,
                    verdict,
                    batch_of_origin: batch.index,
                });
            }
            Err(e) => {
                return Ok(Err(BatchAbort {
                    outcomes,
                    message: format!("backend failure at sample {}: {e}", sample.id),
                }));
            }
        }
    }

    let n = batch.samples.len();
    let n_correct = outcomes.iter().filter(|o| o.correct).count();
    Ok(Ok(BatchEvaluation {
        demos,
        metrics: BatchMetrics {
            batch_index: batch.index,
            n,
            n_correct,
            accuracy: n_correct as f64 / n as f64,
            prompt_stats_before: stats_before,
            strategy_kind,
        },
        outcomes,
    }))
}

fn snapshot_demos(prompt: &Prompt) -> Vec<DemoSnapshot> {
    prompt
        .demos
        .iter()
        .map(|d| DemoSnapshot {
            sample_id: d.sample_id.clone(),
            batch_of_origin: d.batch_of_origin,
            answer_text: d.answer_text.clone(),
            correct: d.verdict.is_correct(),
            newline_count: d.rationale.newline_count,
            token_estimate: d.rationale.token_estimate,
        })
        .collect()
}

/// Runs the full stream: partition, evaluate each batch in order, update the
/// prompt between batches, and assemble the report. A backend failure aborts
/// the remaining batches but still yields a report carrying the completed
/// ones and an abort marker.
pub fn run_stream(
    dataset: &Dataset,
    backend: &dyn Backend,
    params: &StreamParams,
) -> Result<RunReport, StreamError> {
    let start = Instant::now();
    let batches = partition(dataset, params.batches)?;
    let mut prompt = Prompt::new(params.budget_tokens);
    let template = prompt.template.clone();

    let mut metrics: Vec<BatchMetrics> = Vec::with_capacity(batches.len());
    let mut audit: Vec<BatchAudit> = Vec::with_capacity(batches.len());
    let mut aborted_at_batch = None;
    let mut abort_message = None;

    for batch in &batches {
        let questions: Vec<&str> = batch.samples.iter().map(|s| s.question.as_str()).collect();
        let active = enforce_budget_for_questions(prompt.clone(), &questions)?;
        let mut entry = BatchAudit {
            batch_index: batch.index,
            prompt_hash: active.content_hash(),
            prompt_stats: active.stats(),
            prompt_demos: snapshot_demos(&active),
            outcomes: Vec::new(),
        };

        match evaluate_batch(batch, &active, backend, dataset.task, &params.eval, params.strategy.kind)? {
            Ok(evaluation) => {
                entry.outcomes = evaluation.outcomes;
                audit.push(entry);
                metrics.push(evaluation.metrics);

                let is_last = batch.index == params.batches;
                if !is_last || params.update_after_final {
                    match apply_strategy(&active, batch, &evaluation.demos, &params.strategy, backend)
                    {
                        Ok(next) => prompt = next,
                        Err(StrategyError::Prompt(e)) => return Err(e.into()),
                        Err(StrategyError::Backend(e)) => {
                            aborted_at_batch = Some(batch.index + 1);
                            abort_message = Some(format!("prompt update failed: {e}"));
                            break;
                        }
                    }
                } else {
                    prompt = active;
                }
            }
            Err(abort) => {
                entry.outcomes = abort.outcomes;
                audit.push(entry);
                aborted_at_batch = Some(batch.index);
                abort_message = Some(abort.message);
                break;
            }
        }
    }

    let n: usize = metrics.iter().map(|m| m.n).sum();
    let n_correct: usize = metrics.iter().map(|m| m.n_correct).sum();
    let totals = RunTotals {
        n,
        n_correct,
        accuracy: if n == 0 { 0.0 } else { n_correct as f64 / n as f64 },
    };

    let config = params.config_snapshot.clone().unwrap_or_else(|| {
        serde_json::json!({
            "dataset": {"name": dataset.name, "task": dataset.task, "size": dataset.len()},
            "stream": {
                "batches": params.batches,
                "budget_tokens": params.budget_tokens,
                "seed": params.seed,
                "update_after_final": params.update_after_final,
                "max_tokens": params.eval.max_tokens,
                "temperature": params.eval.temperature,
            },
            "strategy": params.strategy,
            "backend": backend.identity(),
        })
    });
    let config_hash = hex::encode(Sha256::digest(
        serde_json::to_string(&config).expect("config serializes").as_bytes(),
    ));

    Ok(RunReport {
        config,
        config_hash,
        backend: backend.identity(),
        template,
        dataset_name: dataset.name.clone(),
        dataset_size: dataset.len(),
        batches_planned: params.batches,
        seed: params.seed,
        strategy: params.strategy.clone(),
        budget_tokens: params.budget_tokens,
        eval: params.eval.clone(),
        stop: vec![STOP_SEQUENCE.to_string()],
        update_after_final: params.update_after_final,
        trailing_newline_stripped: true,
        metrics,
        audit,
        totals,
        aborted_at_batch,
        abort_message,
        wall_clock: start.elapsed(),
    })
}

impl RunReport {
    pub fn to_json_string(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("report serializes");
        out.push('\n');
        out
    }

    pub fn from_json_str(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    /// CSV with one row per batch:
    /// `batch,n,n_correct,accuracy,prompt_demos,prompt_wrong_fraction,prompt_mean_depth,prompt_tokens,strategy`.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from(
            "batch,n,n_correct,accuracy,prompt_demos,prompt_wrong_fraction,prompt_mean_depth,prompt_tokens,strategy\n",
        );
        for m in &self.metrics {
            out.push_str(&format!(
                "{},{},{},{:.4},{},{:.4},{:.4},{},{}\n",
                m.batch_index,
                m.n,
                m.n_correct,
                m.accuracy,
                m.prompt_stats_before.n_demos,
                m.prompt_stats_before.wrong_fraction,
                m.prompt_stats_before.mean_newline_depth,
                m.prompt_stats_before.token_total,
                m.strategy_kind,
            ));
        }
        out
    }

    /// Audit trail as JSONL, one prompt snapshot per batch boundary.
    pub fn audit_trail_jsonl(&self) -> String {
        let mut out = String::new();
        for entry in &self.audit {
            out.push_str(&serde_json::to_string(entry).expect("audit serializes"));
            out.push('\n');
        }
        out
    }
}

/// Writes a report to `path` in the requested format.
pub fn write_report(report: &RunReport, path: impl AsRef<Path>, format: ReportFormat) -> Result<(), StreamError> {
    let content = match format {
        ReportFormat::Json => report.to_json_string(),
        ReportFormat::Csv => report.to_csv_string(),
    };
    std::fs::write(path, content)?;
    Ok(())
}
