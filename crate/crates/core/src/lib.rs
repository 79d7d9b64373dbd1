//! Streaming chain-of-thought prompting harness.
//!
//! A QA corpus is split into sequential batches. Every question in a batch is
//! answered under the same few-shot prompt, and between batches the prompt is
//! rewritten by a pluggable update strategy (concatenation, correct-only,
//! wrong-substitution, shallow/deep replacement) under a hard token budget.
//! Backends are pluggable: an OpenAI-compatible HTTP client, a deterministic
//! scripted mock for simulation, and a record/replay cache wrapper.

pub mod backend;
pub mod dataset;
pub mod grading;
pub mod prompting;
pub mod rationale;
pub mod strategies;
pub mod stream;

mod parallel;
