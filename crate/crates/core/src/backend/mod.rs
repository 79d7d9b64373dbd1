//! Language-model completion backends: an OpenAI-compatible HTTP client, a
//! deterministic scripted mock, and a record/replay cache wrapper, plus the
//! zero-shot chain-of-thought two-stage procedure.

mod cache;
mod http;
mod instrument;
mod mock;
pub mod synthetic;

pub use cache::CacheBackend;
pub use http::HttpBackend;
pub use instrument::{CapturingBackend, CountingBackend};
pub use mock::{MockBackend, MockScript};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::Sample;
use crate::prompting::zero_shot_query;
use crate::rationale::{estimate_tokens, Rationale, RationaleOrigin};

/// Default completion length cap, recorded in every report.
pub const DEFAULT_MAX_TOKENS: usize = 256;

/// Stop sequence applied to every generation request.
pub const STOP_SEQUENCE: &str = "Q:";

/// The stage-2 trigger appended after a stage-1 rationale.
pub const ANSWER_TRIGGER: &str = "\nTherefore, the answer is";

/// One completion request. The canonical serialization (sorted keys, compact)
/// is the cache/replay identity of the request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub max_tokens: usize,
    pub temperature: f64,
    pub stop: Vec<String>,
    pub model_id: String,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>, max_tokens: usize, temperature: f64, model_id: impl Into<String>) -> Self {
        CompletionRequest {
            prompt: prompt.into(),
            max_tokens,
            temperature,
            stop: vec![STOP_SEQUENCE.to_string()],
            model_id: model_id.into(),
        }
    }

    /// Canonical JSON: keys sorted, no insignificant whitespace.
    pub fn canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("request serializes");
        serde_json::to_string(&value).expect("value serializes")
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn cache_key(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    /// First 8 bytes (little-endian) of the content hash, used by the mock
    /// as its per-request decision key.
    pub fn key_u64(&self) -> u64 {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("digest length"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub finish_reason: FinishReason,
    pub prompt_tokens: usize,
    pub completion_tokens: usize,
}

/// Backend identity recorded in report headers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendIdentity {
    pub kind: String,
    pub model_id: String,
    pub params: serde_json::Value,
}

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("network failure after {attempts} attempts: {message}")]
    Network { attempts: u32, message: String },
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("cache store {path} line {line}: {message}")]
    CacheCorrupt {
        path: String,
        line: usize,
        message: String,
    },
    #[error("cache store {path}: {source}")]
    CacheIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A completion backend. Implementations must be safe for concurrent calls.
pub trait Backend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError>;

    /// Model identifier stamped into requests built on behalf of this backend.
    fn model_id(&self) -> String;

    /// Identity and parameters recorded in report headers.
    fn identity(&self) -> BackendIdentity;

    /// Upper bound on concurrent in-flight completions.
    fn in_flight_limit(&self) -> usize {
        4
    }
}

impl Backend for Box<dyn Backend> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        (**self).complete(request)
    }
    fn model_id(&self) -> String {
        (**self).model_id()
    }
    fn identity(&self) -> BackendIdentity {
        (**self).identity()
    }
    fn in_flight_limit(&self) -> usize {
        (**self).in_flight_limit()
    }
}

/// Runs the two-stage zero-shot chain-of-thought procedure for one sample.
///
/// Stage 1 sends the step-by-step query and captures the rationale; stage 2
/// appends the rationale and the answer trigger and captures the answer
/// completion. Both stages share `temperature` and the standard stop
/// sequence. One trailing newline is stripped from the stage-1 completion
/// before the rationale is measured.
pub fn zero_shot_cot(
    sample: &Sample,
    backend: &dyn Backend,
    temperature: f64,
    max_tokens: usize,
) -> Result<(Rationale, String), BackendError> {
    let stage1_prompt = zero_shot_query(&sample.question);
    let model_id = backend.model_id();
    let stage1 = backend.complete(&CompletionRequest::new(
        stage1_prompt.clone(),
        max_tokens,
        temperature,
        model_id.clone(),
    ))?;

    let rationale_text = stage1.text.strip_suffix('\n').unwrap_or(&stage1.text).to_string();
    let origin = if temperature == 0.0 {
        RationaleOrigin::ZeroShotGreedy
    } else {
        RationaleOrigin::Sampled(temperature)
    };
    let rationale = Rationale::new(rationale_text, origin);
    if rationale.is_empty() {
        eprintln!("warning: empty stage-1 rationale for sample {}", sample.id);
    }

    let stage2_prompt = format!("{stage1_prompt}{}{ANSWER_TRIGGER}", rationale.text);
    let stage2 = backend.complete(&CompletionRequest::new(
        stage2_prompt,
        max_tokens,
        temperature,
        model_id,
    ))?;

    Ok((rationale, stage2.text))
}

/// Token accounting fallback when a server omits usage counts.
pub(crate) fn estimated_usage(prompt: &str, completion: &str) -> (usize, usize) {
    (estimate_tokens(prompt), estimate_tokens(completion))
}
