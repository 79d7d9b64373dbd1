//! Answer extraction from model completions and grading against gold answers.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::dataset::TaskKind;

/// Absolute tolerance for numeric comparisons; absorbs formatting noise only.
const NUMERIC_TOLERANCE: f64 = 1e-6;

/// Shipped extraction fixture corpus (JSONL: `completion`, `task`, `expected`).
pub const EXTRACTION_FIXTURES: &str = include_str!("../fixtures/extraction_fixtures.jsonl");

static ANSWER_ANCHOR: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)answer is").expect("static regex"));

// Numeric literals with optional sign, currency marker, and thousand groups.
static NUMBER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"-?\$?(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?").expect("static regex")
});

static YES_NO: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(yes|no)\b").expect("static regex"));

static ALPHA_RUN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[A-Za-z]+").expect("static regex"));

/// Whether an extracted answer matched the gold answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grade {
    Correct,
    Incorrect,
}

/// A grading outcome together with the canonical prediction it graded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub grade: Grade,
    /// Canonicalized extraction; empty when nothing was extractable.
    pub predicted: String,
}

impl Verdict {
    pub fn is_correct(&self) -> bool {
        self.grade == Grade::Correct
    }
}

/// Extracts a canonical answer string from a completion.
///
/// The scope is the text after the last case-insensitive "answer is", falling
/// back to the whole completion. An empty return signals extraction failure.
pub fn extract_answer(completion: &str, task: TaskKind) -> String {
    let scope = match ANSWER_ANCHOR.find_iter(completion).last() {
        Some(m) => &completion[m.end()..],
        None => completion,
    };
    match task {
        TaskKind::Arithmetic => NUMBER
            .find_iter(scope)
            .last()
            .map(|m| normalize_number(m.as_str()))
            .unwrap_or_default(),
        TaskKind::YesNo => YES_NO
            .find(scope)
            .map(|m| m.as_str().to_ascii_lowercase())
            .unwrap_or_default(),
        TaskKind::SymbolicString => ALPHA_RUN
            .find_iter(scope)
            .last()
            .map(|m| m.as_str().to_ascii_lowercase())
            .unwrap_or_default(),
    }
}

/// Canonicalizes a bare answer string (e.g. a dataset gold) using the same
/// normalization extraction applies, so grading is plain comparison.
pub fn canonicalize(raw: &str, task: TaskKind) -> String {
    let trimmed = raw.trim();
    match task {
        TaskKind::Arithmetic => NUMBER
            .find_iter(trimmed)
            .last()
            .map(|m| normalize_number(m.as_str()))
            .unwrap_or_else(|| trimmed.to_string()),
        TaskKind::YesNo => match trimmed.to_ascii_lowercase().as_str() {
            "true" => "yes".to_string(),
            "false" => "no".to_string(),
            other => other.to_string(),
        },
        TaskKind::SymbolicString => trimmed
            .trim_matches(|c: char| c.is_ascii_punctuation() || c == '"' || c == '\'')
            .to_ascii_lowercase(),
    }
}

/// Grades a canonical prediction against a canonical gold answer.
///
/// Arithmetic compares numerically within `1e-6` when both sides parse, else
/// falls back to string equality. Other tasks use exact equality. An empty
/// prediction is always Incorrect.
pub fn grade(predicted: &str, gold: &str, task: TaskKind) -> Verdict {
    let correct = if predicted.is_empty() {
        false
    } else {
        match task {
            TaskKind::Arithmetic => match (predicted.parse::<f64>(), gold.parse::<f64>()) {
                (Ok(p), Ok(g)) => (p - g).abs() <= NUMERIC_TOLERANCE,
                _ => predicted == gold,
            },
            TaskKind::YesNo | TaskKind::SymbolicString => predicted == gold,
        }
    };
    Verdict {
        grade: if correct { Grade::Correct } else { Grade::Incorrect },
        predicted: predicted.to_string(),
    }
}

/// Strips `$` and thousand separators, drops sign on zero, and trims
/// insignificant zeros ("18.0" -> "18", "2.50" -> "2.5", "007" -> "7").
fn normalize_number(literal: &str) -> String {
    let cleaned: String = literal.chars().filter(|c| *c != '$' && *c != ',').collect();
    let (sign, digits) = match cleaned.strip_prefix('-') {
        Some(rest) => ("-", rest),
        None => ("", cleaned.as_str()),
    };
    let (int_part, frac_part) = match digits.split_once('.') {
        Some((i, f)) => (i, f.trim_end_matches('0')),
        None => (digits, ""),
    };
    let int_part = int_part.trim_start_matches('0');
    let int_part = if int_part.is_empty() { "0" } else { int_part };
    let mut out = String::new();
    if frac_part.is_empty() {
        if int_part != "0" {
            out.push_str(sign);
        }
        out.push_str(int_part);
    } else {
        out.push_str(sign);
        out.push_str(int_part);
        out.push('.');
        out.push_str(frac_part);
    }
    out
}
