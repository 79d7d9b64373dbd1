//! Generated rationale text: step parsing, newline depth, token estimates.

use serde::{Deserialize, Serialize};

/// How many characters the heuristic estimator counts per token.
const CHARS_PER_TOKEN: usize = 4;

/// Where a rationale came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RationaleOrigin {
    /// Greedy (temperature 0) decode, as produced by the zero-shot bootstrap
    /// and by few-shot continuations.
    ZeroShotGreedy,
    /// Temperature-sampled decode; carries the sampling temperature.
    Sampled(f64),
    /// Hand-written or test-scripted text.
    Scripted,
}

/// A generated reasoning text with its parsed structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rationale {
    pub text: String,
    /// Number of `\n` characters in `text`.
    pub newline_count: usize,
    /// Comma/newline-separated fragments of `text`, trimmed, empties dropped.
    pub steps: Vec<String>,
    pub token_estimate: usize,
    pub origin: RationaleOrigin,
}

impl Rationale {
    /// Builds a rationale, deriving the structural fields from `text`.
    pub fn new(text: impl Into<String>, origin: RationaleOrigin) -> Self {
        let text = text.into();
        Rationale {
            newline_count: count_newlines(&text),
            steps: split_steps(&text),
            token_estimate: estimate_tokens(&text),
            origin,
            text,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.text.is_empty()
    }
}

/// Deep/shallow classification of a rationale under a threshold ξ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DepthClass {
    Deep,
    Shallow,
}

/// Exact count of `\n` characters in `text`.
pub fn count_newlines(text: &str) -> usize {
    text.bytes().filter(|b| *b == b'\n').count()
}

/// Splits `text` on both `,` and `\n`, trims each fragment, drops empties.
pub fn split_steps(text: &str) -> Vec<String> {
    text.split(['\n', ','])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

/// Deep iff `newline_count >= xi`; the tie is classified Deep so the shallow
/// side stays strictly below the threshold.
pub fn classify_depth(newline_count: usize, xi: usize) -> DepthClass {
    if newline_count >= xi {
        DepthClass::Deep
    } else {
        DepthClass::Shallow
    }
}

/// Estimates a token count for budget enforcement.
pub trait TokenEstimator {
    fn estimate(&self, text: &str) -> usize;
}

/// ceil(chars / 4) with a floor of 1. Good enough for a budget guard; swap in
/// an exact tokenizer through [`TokenEstimator`] when counts must be precise.
#[derive(Debug, Clone, Copy, Default)]
pub struct CharHeuristic;

impl TokenEstimator for CharHeuristic {
    fn estimate(&self, text: &str) -> usize {
        estimate_tokens(text)
    }
}

/// `ceil(character_count / 4)`, minimum 1.
pub fn estimate_tokens(text: &str) -> usize {
    let chars = text.chars().count();
    (chars.div_ceil(CHARS_PER_TOKEN)).max(1)
}
