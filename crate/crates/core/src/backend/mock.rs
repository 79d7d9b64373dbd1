//! Deterministic scripted mock backend.
//!
//! The mock answers synthetic arithmetic questions of the form
//! `What is <a> <op> <b>?`. Whether a reply is correct is drawn from a seeded
//! hash of the request, with a probability that depends on the composition of
//! the demonstrations visible in the prompt, so prompt-update strategies have
//! a measurable effect on simulated accuracy.
//!
//! Decision derivation (stable contract, relied on by replay oracles):
//! `key = first 8 LE bytes of SHA-256(canonical request JSON)`, and each draw
//! is `first 8 LE bytes of SHA-256(seed_le || key_le || attempt_le || tag)`
//! mapped to `[0,1)` by dividing by 2^64. Tags: `correct`, `depth`, `wrong`,
//! `fallback`.

use std::collections::HashMap;
use std::sync::LazyLock;
use std::sync::Mutex;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, BackendError, BackendIdentity, CompletionRequest, CompletionResponse, FinishReason, ANSWER_TRIGGER};
use crate::prompting::STEP_BY_STEP;
use crate::rationale::estimate_tokens;

/// Newline count below which the mock counts a demo rationale as shallow
/// when applying the shallow bonus.
const MOCK_SHALLOW_THRESHOLD: usize = 3;

static QUESTION_MATH: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"[Ww]hat is\s+(-?\d+)\s*([+*-])\s*(-?\d+)").expect("static regex")
});

static INTEGER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"-?\d+").expect("static regex"));

static ANSWER_STATED: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)the answer is\s*(-?\d+)").expect("static regex"));

/// Simulation parameters. Defaults are simulation knobs, recorded in every
/// report header; they are not claims about any real model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    pub seed: u64,
    /// Base probability of a correct reply with an empty prompt.
    pub correct_base: f64,
    /// Added per unit of shallow-demo fraction in the prompt.
    pub shallow_bonus: f64,
    /// Subtracted per unit of wrong-demo fraction in the prompt.
    pub wrong_penalty: f64,
    /// Weighted distribution of rationale newline counts.
    pub depth_distribution: Vec<(usize, f64)>,
}

impl Default for MockScript {
    fn default() -> Self {
        MockScript {
            seed: 0,
            correct_base: 0.6,
            shallow_bonus: 0.2,
            wrong_penalty: 0.1,
            depth_distribution: vec![
                (0, 0.15),
                (1, 0.20),
                (2, 0.20),
                (3, 0.15),
                (4, 0.15),
                (5, 0.10),
                (6, 0.05),
            ],
        }
    }
}

impl MockScript {
    pub fn seeded(seed: u64) -> Self {
        MockScript {
            seed,
            ..MockScript::default()
        }
    }
}

/// Scripted mock backend. Temperature-0 requests are pure functions of the
/// request content and seed; temperature > 0 varies by a per-request attempt
/// counter, so retrying the same query yields fresh draws. Counters are
/// per-instance state: construct one backend per run for reproducible runs.
pub struct MockBackend {
    script: MockScript,
    attempts: Mutex<HashMap<u64, u64>>,
}

#[derive(Clone, Copy)]
enum Mode<'a> {
    Stage1 { question: &'a str },
    Stage2 { rationale: &'a str, question: &'a str },
    FewShot { question: &'a str, prefix: &'a str },
    Generic { question: &'a str },
}

impl MockBackend {
    pub fn new(script: MockScript) -> Self {
        MockBackend {
            script,
            attempts: Mutex::new(HashMap::new()),
        }
    }

    pub fn seeded(seed: u64) -> Self {
        MockBackend::new(MockScript::seeded(seed))
    }

    pub fn script(&self) -> &MockScript {
        &self.script
    }

    fn draw(&self, key: u64, attempt: u64, tag: &str) -> u64 {
        let mut hasher = Sha256::new();
        hasher.update(self.script.seed.to_le_bytes());
        hasher.update(key.to_le_bytes());
        hasher.update(attempt.to_le_bytes());
        hasher.update(tag.as_bytes());
        let digest = hasher.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("digest length"))
    }

    fn draw_unit(&self, key: u64, attempt: u64, tag: &str) -> f64 {
        self.draw(key, attempt, tag) as f64 / (u64::MAX as f64 + 1.0)
    }

    fn next_attempt(&self, key: u64) -> u64 {
        let mut attempts = self.attempts.lock().expect("attempt counter poisoned");
        let entry = attempts.entry(key).or_insert(0);
        let current = *entry;
        *entry += 1;
        current
    }

    fn sample_depth(&self, unit: f64) -> usize {
        let total: f64 = self.script.depth_distribution.iter().map(|(_, w)| w).sum();
        if total <= 0.0 {
            return 0;
        }
        let mut remaining = unit * total;
        for (depth, weight) in &self.script.depth_distribution {
            if remaining < *weight {
                return *depth;
            }
            remaining -= weight;
        }
        self.script.depth_distribution.last().map(|(d, _)| *d).unwrap_or(0)
    }

    fn correctness_probability(&self, prefix: &str) -> f64 {
        let mut parsable = 0usize;
        let mut wrong = 0usize;
        let mut shallow = 0usize;
        for segment in prefix.split("\n\n") {
            if !segment.starts_with("Q: ") {
                continue;
            }
            let Some(truth) = eval_question(segment) else { continue };
            let Some(stated) = ANSWER_STATED
                .captures_iter(segment)
                .last()
                .and_then(|c| c[1].parse::<i64>().ok())
            else {
                continue;
            };
            parsable += 1;
            if stated != truth {
                wrong += 1;
            }
            // Rationale newlines: segment newlines minus the Q/A separator.
            let newlines = segment.bytes().filter(|b| *b == b'\n').count().saturating_sub(1);
            if newlines < MOCK_SHALLOW_THRESHOLD {
                shallow += 1;
            }
        }
        if parsable == 0 {
            return self.script.correct_base.clamp(0.0, 1.0);
        }
        let shallow_frac = shallow as f64 / parsable as f64;
        let wrong_frac = wrong as f64 / parsable as f64;
        (self.script.correct_base + self.script.shallow_bonus * shallow_frac
            - self.script.wrong_penalty * wrong_frac)
            .clamp(0.0, 1.0)
    }

    // Emits exactly `depth + 1` lines so the rationale has `depth` newlines.
    fn build_rationale(question: &str, answer: i64, depth: usize) -> String {
        let operands = QUESTION_MATH
            .captures(question)
            .map(|c| (c[1].to_string(), c[3].to_string()));
        let mut lines = Vec::with_capacity(depth + 1);
        match (&operands, depth) {
            (Some((a, b)), 0) => lines.push(format!("We combine {a} and {b} to get {answer}.")),
            (Some((a, _)), _) => lines.push(format!("We start from {a}.")),
            (None, 0) => lines.push(format!("We reason it out and get {answer}.")),
            (None, _) => lines.push("We reason it out.".to_string()),
        }
        if depth >= 1 {
            if depth >= 2 {
                if let Some((_, b)) = &operands {
                    lines.push(format!("We bring in {b}."));
                } else {
                    lines.push(format!("We hold at {answer}."));
                }
                for i in 2..depth {
                    lines.push(format!("Step {i} keeps the running value at {answer}."));
                }
            }
            lines.push(format!("So we get {answer}."));
        }
        lines.join("\n")
    }

    fn respond(&self, request: &CompletionRequest) -> String {
        let mode = detect_mode(&request.prompt);
        let key = request.key_u64();
        let attempt = if request.temperature > 0.0 {
            self.next_attempt(key)
        } else {
            0
        };

        // Stage 2 echoes the conclusion already present in the rationale.
        if let Mode::Stage2 { rationale, question } = mode {
            if let Some(m) = INTEGER.find_iter(rationale).last() {
                return format!(" {}.", m.as_str());
            }
            let answer = match eval_question(question) {
                Some(truth) => truth,
                None => (self.draw(key, attempt, "fallback") % 1000) as i64,
            };
            return format!(" {answer}.");
        }

        let (question, prefix) = match mode {
            Mode::Stage1 { question } => (question, ""),
            Mode::FewShot { question, prefix } => (question, prefix),
            Mode::Generic { question } => (question, ""),
            Mode::Stage2 { .. } => unreachable!("handled above"),
        };

        let p = self.correctness_probability(prefix);
        let correct = self.draw_unit(key, attempt, "correct") < p;
        let depth = self.sample_depth(self.draw_unit(key, attempt, "depth"));
        let answer = match eval_question(question) {
            Some(truth) if correct => truth,
            Some(truth) => truth + 1 + (self.draw(key, attempt, "wrong") % 7) as i64,
            None => (self.draw(key, attempt, "fallback") % 1000) as i64,
        };
        let rationale = Self::build_rationale(question, answer, depth);

        match mode {
            Mode::Stage1 { .. } => rationale,
            Mode::FewShot { .. } => format!("{rationale} The answer is {answer}."),
            _ => format!("The answer is {answer}."),
        }
    }
}

/// Evaluates the `What is <a> <op> <b>?` arithmetic embedded in a question.
fn eval_question(text: &str) -> Option<i64> {
    let caps = QUESTION_MATH.captures(text)?;
    let a: i64 = caps[1].parse().ok()?;
    let b: i64 = caps[3].parse().ok()?;
    match &caps[2] {
        "+" => Some(a + b),
        "-" => Some(a - b),
        "*" => Some(a * b),
        _ => None,
    }
}

fn detect_mode(prompt: &str) -> Mode<'_> {
    if let Some(stripped) = prompt.strip_suffix(ANSWER_TRIGGER) {
        let rationale_start = stripped
            .rfind(STEP_BY_STEP)
            .map(|pos| pos + STEP_BY_STEP.len())
            .unwrap_or(0);
        return Mode::Stage2 {
            rationale: &stripped[rationale_start..],
            question: final_question(stripped),
        };
    }
    let question = final_question(prompt);
    if prompt.ends_with(STEP_BY_STEP) {
        return Mode::Stage1 { question };
    }
    if prompt.ends_with("\nA:") {
        let prefix = prompt.rfind("Q: ").map(|pos| &prompt[..pos]).unwrap_or("");
        return Mode::FewShot { question, prefix };
    }
    Mode::Generic { question }
}

fn final_question(prompt: &str) -> &str {
    let start = match prompt.rfind("Q: ") {
        Some(pos) => pos + 3,
        None => return prompt,
    };
    let rest = &prompt[start..];
    match rest.find("\nA:") {
        Some(end) => &rest[..end],
        None => rest,
    }
}

impl Backend for MockBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        let text = self.respond(request);
        Ok(CompletionResponse {
            prompt_tokens: estimate_tokens(&request.prompt),
            completion_tokens: estimate_tokens(&text),
            finish_reason: FinishReason::Stop,
            text,
        })
    }

    fn model_id(&self) -> String {
        "mock-sim".to_string()
    }

    fn identity(&self) -> BackendIdentity {
        BackendIdentity {
            kind: "mock".to_string(),
            model_id: self.model_id(),
            params: serde_json::to_value(&self.script).expect("script serializes"),
        }
    }
}
