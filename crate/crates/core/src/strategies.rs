//! Prompt update strategies applied between batches.
//!
//! Each update maps the old prompt plus the batch's graded question-rationale
//! pairs to the next prompt. All outputs are budget-enforced, so every
//! strategy preserves the prompt budget invariant.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backend::{zero_shot_cot, Backend, BackendError, DEFAULT_MAX_TOKENS};
use crate::dataset::{Batch, Sample};
use crate::grading::{extract_answer, grade, Verdict};
use crate::parallel;
use crate::prompting::{enforce_budget, Demonstration, Prompt, PromptError};
use crate::rationale::{classify_depth, DepthClass, Rationale};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StrategyKind {
    #[serde(rename = "zero-shot")]
    ZeroShot,
    #[serde(rename = "concat")]
    Concat,
    #[serde(rename = "correct-only")]
    CorrectOnly,
    #[serde(rename = "wrong-substitute")]
    WrongSubstitute,
    #[serde(rename = "shallow")]
    ShallowReplace,
    #[serde(rename = "deep")]
    DeepReplace,
}

impl FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "zero-shot" | "zeroshot" => Ok(StrategyKind::ZeroShot),
            "concat" => Ok(StrategyKind::Concat),
            "correct-only" | "correct" => Ok(StrategyKind::CorrectOnly),
            "wrong-substitute" | "wrong" => Ok(StrategyKind::WrongSubstitute),
            "shallow" | "shallow-replace" => Ok(StrategyKind::ShallowReplace),
            "deep" | "deep-replace" => Ok(StrategyKind::DeepReplace),
            other => Err(format!(
                "unknown strategy '{other}' (expected zero-shot, concat, correct-only, wrong-substitute, shallow, or deep)"
            )),
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            StrategyKind::ZeroShot => "zero-shot",
            StrategyKind::Concat => "concat",
            StrategyKind::CorrectOnly => "correct-only",
            StrategyKind::WrongSubstitute => "wrong-substitute",
            StrategyKind::ShallowReplace => "shallow",
            StrategyKind::DeepReplace => "deep",
        };
        write!(f, "{name}")
    }
}

/// Which update to apply and its knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    /// Depth threshold ξ for shallow/deep classification.
    pub xi: usize,
    /// Maximum demonstrations kept by the selective strategies.
    pub demo_cap: usize,
    /// Zero-shot retries when searching for a wrong rationale.
    pub wrong_attempts: usize,
    /// Sampling temperature for the wrong-rationale search.
    pub wrong_temperature: f64,
}

impl StrategyConfig {
    pub fn new(kind: StrategyKind) -> Self {
        StrategyConfig {
            kind,
            ..StrategyConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.xi < 1 {
            return Err("xi must be at least 1".to_string());
        }
        if self.demo_cap < 1 {
            return Err("demo-cap must be at least 1".to_string());
        }
        if self.wrong_attempts < 1 {
            return Err("wrong-attempts must be at least 1".to_string());
        }
        if !(self.wrong_temperature > 0.0 && self.wrong_temperature <= 2.0) {
            return Err("wrong-temperature must be in (0, 2]".to_string());
        }
        Ok(())
    }
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig {
            kind: StrategyKind::Concat,
            xi: 3,
            demo_cap: 8,
            wrong_attempts: 4,
            wrong_temperature: 0.7,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StrategyError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Appends all new pairs in batch order, then enforces the budget.
pub fn update_concat(prompt: &Prompt, pairs: &[Demonstration]) -> Result<Prompt, PromptError> {
    let mut next = prompt.clone();
    next.demos.extend(pairs.iter().cloned());
    enforce_budget(next, "")
}

/// Rebuilds the prompt from the batch's correct pairs, capped, earliest
/// first. A batch with zero correct pairs leaves the prompt unchanged.
pub fn update_correct_only(
    prompt: &Prompt,
    pairs: &[Demonstration],
    cfg: &StrategyConfig,
) -> Result<Prompt, PromptError> {
    let correct: Vec<Demonstration> = pairs
        .iter()
        .filter(|d| d.verdict.is_correct())
        .take(cfg.demo_cap)
        .cloned()
        .collect();
    if correct.is_empty() {
        return Ok(prompt.clone());
    }
    let mut next = prompt.clone();
    next.demos = correct;
    enforce_budget(next, "")
}

/// Re-runs the zero-shot procedure at the configured temperature until an
/// attempt's extracted answer grades Incorrect. Returns the first such
/// rationale with its verdict, or None when every attempt was correct or
/// produced nothing gradable.
pub fn find_wrong_rationale(
    sample: &Sample,
    backend: &dyn Backend,
    cfg: &StrategyConfig,
) -> Result<Option<(Rationale, Verdict)>, BackendError> {
    for _ in 0..cfg.wrong_attempts {
        let (rationale, answer_completion) =
            zero_shot_cot(sample, backend, cfg.wrong_temperature, DEFAULT_MAX_TOKENS)?;
        let predicted = extract_answer(&answer_completion, sample.task);
        if predicted.is_empty() {
            continue;
        }
        let verdict = grade(&predicted, &sample.gold, sample.task);
        if !verdict.is_correct() {
            return Ok(Some((rationale, verdict)));
        }
    }
    Ok(None)
}

/// Builds a prompt whose incorrect demonstrations form a strict majority:
/// `w` wrong demos (maximized up to the pool and cap) plus `c < w` correct
/// fillers. An empty wrong pool yields the empty prompt rather than a prompt
/// that silently violates the majority invariant.
pub fn update_wrong_substitute(
    prompt: &Prompt,
    pairs: &[Demonstration],
    wrong_pool: &[Demonstration],
    cfg: &StrategyConfig,
) -> Result<Prompt, PromptError> {
    debug_assert!(wrong_pool.iter().all(|d| !d.verdict.is_correct()));
    let mut next = prompt.clone();
    next.demos.clear();
    let wrong_count = wrong_pool.len().min(cfg.demo_cap);
    if wrong_count == 0 {
        return Ok(next);
    }
    let correct: Vec<&Demonstration> = pairs.iter().filter(|d| d.verdict.is_correct()).collect();
    let correct_count = correct
        .len()
        .min(cfg.demo_cap - wrong_count)
        .min(wrong_count - 1);
    // Correct fillers go first: FIFO budget eviction then drops fillers
    // before any wrong demo, so the strict majority cannot be evicted away.
    next.demos
        .extend(correct[..correct_count].iter().map(|d| (*d).clone()));
    next.demos.extend(wrong_pool[..wrong_count].iter().cloned());
    enforce_budget(next, "")
}

fn replace_by_depth(
    prompt: &Prompt,
    pairs: &[Demonstration],
    cfg: &StrategyConfig,
    keep: DepthClass,
) -> Result<Prompt, PromptError> {
    let mut selected: Vec<Demonstration> = pairs
        .iter()
        .filter(|d| {
            d.verdict.is_correct() && classify_depth(d.rationale.newline_count, cfg.xi) == keep
        })
        .cloned()
        .collect();
    if selected.is_empty() {
        return Ok(prompt.clone());
    }
    // Stable sort keeps batch order among equal depths.
    match keep {
        DepthClass::Shallow => selected.sort_by_key(|d| d.rationale.newline_count),
        DepthClass::Deep => selected.sort_by_key(|d| std::cmp::Reverse(d.rationale.newline_count)),
    }
    selected.truncate(cfg.demo_cap);
    let mut next = prompt.clone();
    next.demos = selected;
    enforce_budget(next, "")
}

/// Keeps only correct pairs classified Shallow under ξ, shortest first.
pub fn update_shallow_replace(
    prompt: &Prompt,
    pairs: &[Demonstration],
    cfg: &StrategyConfig,
) -> Result<Prompt, PromptError> {
    replace_by_depth(prompt, pairs, cfg, DepthClass::Shallow)
}

/// Mirror of the shallow replacement: correct Deep pairs, deepest first.
pub fn update_deep_replace(
    prompt: &Prompt,
    pairs: &[Demonstration],
    cfg: &StrategyConfig,
) -> Result<Prompt, PromptError> {
    replace_by_depth(prompt, pairs, cfg, DepthClass::Deep)
}

/// Dispatches the configured update. WrongSubstitute first searches the
/// batch's samples for wrong rationales (concurrently, merged in batch
/// order); it is the only strategy that touches the backend.
pub fn apply_strategy(
    prompt: &Prompt,
    batch: &Batch,
    demos: &[Demonstration],
    cfg: &StrategyConfig,
    backend: &dyn Backend,
) -> Result<Prompt, StrategyError> {
    match cfg.kind {
        StrategyKind::ZeroShot => Ok(Prompt {
            demos: Vec::new(),
            budget_tokens: prompt.budget_tokens,
            template: prompt.template.clone(),
        }),
        StrategyKind::Concat => Ok(update_concat(prompt, demos)?),
        StrategyKind::CorrectOnly => Ok(update_correct_only(prompt, demos, cfg)?),
        StrategyKind::WrongSubstitute => {
            // The search samples at temperature > 0, where retry draws are
            // keyed by request content; duplicate questions evaluated in
            // parallel would race on those draws, so the search runs one
            // sample at a time, in batch order.
            let results = parallel::map_ordered(&batch.samples, 1, |_, sample| {
                find_wrong_rationale(sample, backend, cfg)
            });
            let mut wrong_pool = Vec::new();
            for (sample, result) in batch.samples.iter().zip(results) {
                if let Some((rationale, verdict)) = result? {
                    wrong_pool.push(Demonstration {
                        sample_id: sample.id.clone(),
                        question: sample.question.clone(),
                        answer_text: verdict.predicted.clone(),
                        rationale,
                        verdict,
                        batch_of_origin: batch.index,
                    });
                }
            }
            Ok(update_wrong_substitute(prompt, demos, &wrong_pool, cfg)?)
        }
        StrategyKind::ShallowReplace => Ok(update_shallow_replace(prompt, demos, cfg)?),
        StrategyKind::DeepReplace => Ok(update_deep_replace(prompt, demos, cfg)?),
    }
}
