//! Python bindings for the cotstream harness.
//!
//! Exposes the pure text operations (step parsing, depth classification,
//! answer extraction, grading), dataset helpers, and a seeded mock stream
//! runner that returns the full JSON run report.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use cotstream_core::backend::synthetic::arithmetic_dataset;
use cotstream_core::backend::{MockBackend, MockScript};
use cotstream_core::dataset::{self, TaskKind};
use cotstream_core::grading;
use cotstream_core::prompting;
use cotstream_core::rationale::{self, DepthClass};
use cotstream_core::stream::{run_stream, StreamParams};
use cotstream_core::strategies::{StrategyConfig, StrategyKind};

fn parse_task(task: &str) -> PyResult<TaskKind> {
    task.parse().map_err(PyValueError::new_err)
}

/// Number of `\n` characters in `text`.
#[pyfunction]
fn count_newlines(text: &str) -> usize {
    rationale::count_newlines(text)
}

/// Comma/newline-separated steps of a rationale, trimmed, empties dropped.
#[pyfunction]
fn split_steps(text: &str) -> Vec<String> {
    rationale::split_steps(text)
}

/// "deep" when `newline_count >= xi`, else "shallow".
#[pyfunction]
fn classify_depth(newline_count: usize, xi: usize) -> PyResult<String> {
    if xi < 1 {
        return Err(PyValueError::new_err("xi must be at least 1"));
    }
    Ok(match rationale::classify_depth(newline_count, xi) {
        DepthClass::Deep => "deep".to_string(),
        DepthClass::Shallow => "shallow".to_string(),
    })
}

/// Heuristic token estimate: ceil(chars / 4), minimum 1.
#[pyfunction]
fn estimate_tokens(text: &str) -> usize {
    rationale::estimate_tokens(text)
}

/// Canonical answer extracted from a completion for the given task
/// ("arithmetic", "yesno", or "symbolic"); empty string when nothing
/// extractable.
#[pyfunction]
fn extract_answer(completion: &str, task: &str) -> PyResult<String> {
    Ok(grading::extract_answer(completion, parse_task(task)?))
}

/// Whether a canonical prediction matches the gold answer under the task's
/// grading rules.
#[pyfunction]
fn grade(predicted: &str, gold: &str, task: &str) -> PyResult<bool> {
    Ok(grading::grade(predicted, gold, parse_task(task)?).is_correct())
}

/// The zero-shot stage-1 query for a question.
#[pyfunction]
fn zero_shot_query(question: &str) -> String {
    prompting::zero_shot_query(question)
}

/// Batch sizes produced by evenly partitioning `n` samples into `m` batches.
#[pyfunction]
fn partition_sizes(n: usize, m: usize) -> PyResult<Vec<usize>> {
    let dataset = arithmetic_dataset(0, n);
    let batches = dataset::partition(&dataset, m).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(batches.into_iter().map(|b| b.samples.len()).collect())
}

/// Loads a JSONL corpus and returns (id, question, gold) tuples.
#[pyfunction]
#[pyo3(signature = (path, task, limit=None))]
fn load_dataset(path: &str, task: &str, limit: Option<usize>) -> PyResult<Vec<(String, String, String)>> {
    let dataset = dataset::load_dataset(path, parse_task(task)?, limit)
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(dataset
        .samples
        .into_iter()
        .map(|s| (s.id, s.question, s.gold))
        .collect())
}

/// Runs a seeded synthetic stream against the scripted mock and returns the
/// JSON run report. Identical arguments give byte-identical reports.
#[pyfunction]
#[pyo3(signature = (
    seed,
    strategy,
    batches = 10,
    batch_size = 40,
    xi = 3,
    demo_cap = 8,
    budget = 2048,
    correct_base = 0.6,
    shallow_bonus = 0.2,
    wrong_penalty = 0.1,
))]
#[allow(clippy::too_many_arguments)]
fn run_mock_stream(
    seed: u64,
    strategy: &str,
    batches: usize,
    batch_size: usize,
    xi: usize,
    demo_cap: usize,
    budget: usize,
    correct_base: f64,
    shallow_bonus: f64,
    wrong_penalty: f64,
) -> PyResult<String> {
    let kind: StrategyKind = strategy.parse().map_err(PyValueError::new_err)?;
    let config = StrategyConfig {
        kind,
        xi,
        demo_cap,
        ..StrategyConfig::default()
    };
    config.validate().map_err(PyValueError::new_err)?;

    let dataset = arithmetic_dataset(seed, batch_size * batches);
    let script = MockScript {
        seed,
        correct_base,
        shallow_bonus,
        wrong_penalty,
        ..MockScript::default()
    };
    let backend = MockBackend::new(script);
    let params = StreamParams::new(batches, config, budget, seed);
    let report = run_stream(&dataset, &backend, &params)
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(report.to_json_string())
}

#[pymodule]
fn cotstream(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(count_newlines, m)?)?;
    m.add_function(wrap_pyfunction!(split_steps, m)?)?;
    m.add_function(wrap_pyfunction!(classify_depth, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_tokens, m)?)?;
    m.add_function(wrap_pyfunction!(extract_answer, m)?)?;
    m.add_function(wrap_pyfunction!(grade, m)?)?;
    m.add_function(wrap_pyfunction!(zero_shot_query, m)?)?;
    m.add_function(wrap_pyfunction!(partition_sizes, m)?)?;
    m.add_function(wrap_pyfunction!(load_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(run_mock_stream, m)?)?;
    Ok(())
}
