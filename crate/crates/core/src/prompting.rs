//! The prompt data model: an ordered demonstration list rendered into
//! few-shot query text under a hard token budget.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::grading::Verdict;
use crate::rationale::{estimate_tokens, Rationale};

/// Default rendering template identifier, recorded in reports.
pub const DEFAULT_TEMPLATE: &str = "qa-v1";

/// Default token budget; matches a 2048-token context window.
pub const DEFAULT_BUDGET_TOKENS: usize = 2048;

/// The zero-shot reasoning trigger used when a prompt has no demonstrations.
pub const STEP_BY_STEP: &str = "Let's think step by step.";

/// A question‖rationale‖answer triple with its correctness verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub sample_id: String,
    pub question: String,
    pub rationale: Rationale,
    /// Canonical extracted answer rendered after "The answer is".
    pub answer_text: String,
    pub verdict: Verdict,
    /// Stream step (batch index) the demonstration was generated in.
    pub batch_of_origin: usize,
}

/// The ordered demonstration list P with its budget and template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub demos: Vec<Demonstration>,
    pub budget_tokens: usize,
    pub template: String,
}

/// Composition statistics of a prompt, surfaced in reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptStats {
    pub n_demos: usize,
    /// Fraction of demonstrations graded Incorrect; 0 when empty.
    pub wrong_fraction: f64,
    pub mean_newline_depth: f64,
    /// Token estimate of the rendered demonstration block.
    pub token_total: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("budget of {budget} tokens cannot hold the bare question template ({required} tokens)")]
    BudgetTooSmall { budget: usize, required: usize },
}

impl Prompt {
    pub fn new(budget_tokens: usize) -> Self {
        Prompt {
            demos: Vec::new(),
            budget_tokens,
            template: DEFAULT_TEMPLATE.to_string(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.demos.is_empty()
    }

    pub fn stats(&self) -> PromptStats {
        let n = self.demos.len();
        let wrong = self.demos.iter().filter(|d| !d.verdict.is_correct()).count();
        let depth_sum: usize = self.demos.iter().map(|d| d.rationale.newline_count).sum();
        PromptStats {
            n_demos: n,
            wrong_fraction: if n == 0 { 0.0 } else { wrong as f64 / n as f64 },
            mean_newline_depth: if n == 0 { 0.0 } else { depth_sum as f64 / n as f64 },
            token_total: estimate_tokens(&render_demo_block(self)),
        }
    }

    /// Hex SHA-256 of the serialized prompt; logged per batch for the
    /// intra-batch constancy audit.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("prompt serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// The stage-1 zero-shot query for a bare question.
pub fn zero_shot_query(question: &str) -> String {
    format!("Q: {question}\nA: {STEP_BY_STEP}")
}

fn render_demo_block(prompt: &Prompt) -> String {
    let mut out = String::new();
    for demo in &prompt.demos {
        out.push_str(&format!(
            "Q: {}\nA: {} The answer is {}.\n\n",
            demo.question, demo.rationale.text, demo.answer_text
        ));
    }
    out
}

/// Renders the few-shot query: each demonstration in order, then the target
/// question. With zero demonstrations this is the zero-shot stage-1 form.
pub fn render_prompt(prompt: &Prompt, question: &str) -> String {
    if prompt.demos.is_empty() {
        return zero_shot_query(question);
    }
    format!("{}Q: {question}\nA:", render_demo_block(prompt))
}

/// Evicts oldest demonstrations (FIFO) until the rendered query for
/// `question` fits the budget. Errors when even zero demonstrations overflow.
pub fn enforce_budget(mut prompt: Prompt, question: &str) -> Result<Prompt, PromptError> {
    loop {
        let tokens = estimate_tokens(&render_prompt(&prompt, question));
        if tokens <= prompt.budget_tokens {
            return Ok(prompt);
        }
        if prompt.demos.is_empty() {
            return Err(PromptError::BudgetTooSmall {
                budget: prompt.budget_tokens,
                required: tokens,
            });
        }
        prompt.demos.remove(0);
    }
}

/// FIFO eviction until every question in the slice renders within budget.
/// Keeping one prompt value per batch preserves the intra-batch property that
/// all questions are answered under the identical prompt.
pub fn enforce_budget_for_questions(
    mut prompt: Prompt,
    questions: &[&str],
) -> Result<Prompt, PromptError> {
    loop {
        let worst = questions
            .iter()
            .map(|q| estimate_tokens(&render_prompt(&prompt, q)))
            .max()
            .unwrap_or_else(|| estimate_tokens(&render_prompt(&prompt, "")));
        if worst <= prompt.budget_tokens {
            return Ok(prompt);
        }
        if prompt.demos.is_empty() {
            return Err(PromptError::BudgetTooSmall {
                budget: prompt.budget_tokens,
                required: worst,
            });
        }
        prompt.demos.remove(0);
    }
}
