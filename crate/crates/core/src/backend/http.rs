//! OpenAI-compatible completions client with retry and backoff.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{estimated_usage, Backend, BackendError, BackendIdentity, CompletionRequest, CompletionResponse, FinishReason};

/// Environment variable holding the bearer token.
pub const API_KEY_VAR: &str = "COTSTREAM_API_KEY";
/// Environment variable holding the endpoint base URL.
pub const BASE_URL_VAR: &str = "COTSTREAM_BASE_URL";

const DEFAULT_ATTEMPTS: u32 = 3;
const DEFAULT_BACKOFF: Duration = Duration::from_secs(1);
const DEFAULT_IN_FLIGHT: usize = 4;

#[derive(Deserialize)]
struct ApiResponse {
    choices: Vec<ApiChoice>,
    #[serde(default)]
    usage: Option<ApiUsage>,
}

#[derive(Deserialize)]
struct ApiChoice {
    text: String,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct ApiUsage {
    #[serde(default)]
    prompt_tokens: Option<usize>,
    #[serde(default)]
    completion_tokens: Option<usize>,
}

/// Counting semaphore bounding concurrent HTTP calls.
struct Gate {
    max: usize,
    in_flight: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(max: usize) -> Self {
        Gate {
            max: max.max(1),
            in_flight: Mutex::new(0),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> GateGuard<'_> {
        let mut count = self.in_flight.lock().expect("gate poisoned");
        while *count >= self.max {
            count = self.cv.wait(count).expect("gate poisoned");
        }
        *count += 1;
        GateGuard { gate: self }
    }
}

struct GateGuard<'a> {
    gate: &'a Gate,
}

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        let mut count = self.gate.in_flight.lock().expect("gate poisoned");
        *count -= 1;
        self.gate.cv.notify_one();
    }
}

/// Blocking client for `POST <base_url>/v1/completions`.
pub struct HttpBackend {
    base_url: String,
    api_key: String,
    model_id: String,
    attempts: u32,
    backoff_base: Duration,
    gate: Gate,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>, model_id: impl Into<String>) -> Self {
        HttpBackend {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: api_key.into(),
            model_id: model_id.into(),
            attempts: DEFAULT_ATTEMPTS,
            backoff_base: DEFAULT_BACKOFF,
            gate: Gate::new(DEFAULT_IN_FLIGHT),
            agent: ureq::AgentBuilder::new()
                .timeout(Duration::from_secs(120))
                .build(),
        }
    }

    /// Builds a client from `COTSTREAM_BASE_URL` and `COTSTREAM_API_KEY`.
    pub fn from_env(model_id: impl Into<String>) -> Result<Self, BackendError> {
        let base_url = std::env::var(BASE_URL_VAR)
            .map_err(|_| BackendError::Config(format!("set {BASE_URL_VAR} to the endpoint base URL")))?;
        let api_key = std::env::var(API_KEY_VAR)
            .map_err(|_| BackendError::Config(format!("set {API_KEY_VAR} to the API bearer token")))?;
        Ok(HttpBackend::new(base_url, api_key, model_id))
    }

    pub fn with_retry(mut self, attempts: u32, backoff_base: Duration) -> Self {
        self.attempts = attempts.max(1);
        self.backoff_base = backoff_base;
        self
    }

    pub fn with_in_flight(mut self, limit: usize) -> Self {
        self.gate = Gate::new(limit);
        self
    }

    fn endpoint(&self) -> String {
        format!("{}/v1/completions", self.base_url)
    }

    fn parse_response(&self, request: &CompletionRequest, body: String) -> Result<CompletionResponse, BackendError> {
        let parsed: ApiResponse = serde_json::from_str(&body)
            .map_err(|e| BackendError::MalformedResponse(format!("{e}; body: {body}")))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::MalformedResponse("no choices in response".to_string()))?;
        let finish_reason = match choice.finish_reason.as_deref() {
            Some("stop") | None => FinishReason::Stop,
            Some("length") => FinishReason::Length,
            Some(_) => FinishReason::Error,
        };
        let (est_prompt, est_completion) = estimated_usage(&request.prompt, &choice.text);
        let usage = parsed.usage.unwrap_or(ApiUsage {
            prompt_tokens: None,
            completion_tokens: None,
        });
        let completion_tokens = usage.completion_tokens.unwrap_or(match finish_reason {
            FinishReason::Length => request.max_tokens,
            _ => est_completion,
        });
        Ok(CompletionResponse {
            text: choice.text,
            finish_reason,
            prompt_tokens: usage.prompt_tokens.unwrap_or(est_prompt),
            completion_tokens,
        })
    }
}

fn retryable_status(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

impl Backend for HttpBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        let _slot = self.gate.acquire();
        let body = json!({
            "model": request.model_id,
            "prompt": request.prompt,
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
            "stop": request.stop,
        });

        let mut last_error = None;
        for attempt in 0..self.attempts {
            if attempt > 0 {
                std::thread::sleep(self.backoff_base * 2u32.pow(attempt - 1));
            }
            let result = self
                .agent
                .post(&self.endpoint())
                .set("Authorization", &format!("Bearer {}", self.api_key))
                .set("Content-Type", "application/json")
                .send_json(body.clone());
            match result {
                Ok(response) => {
                    let text = response.into_string().map_err(|e| {
                        BackendError::MalformedResponse(format!("unreadable body: {e}"))
                    })?;
                    return self.parse_response(request, text);
                }
                Err(ureq::Error::Status(status, response)) => {
                    let body = response.into_string().unwrap_or_default();
                    if retryable_status(status) {
                        last_error = Some(BackendError::Http { status, body });
                        continue;
                    }
                    return Err(BackendError::Http { status, body });
                }
                Err(ureq::Error::Transport(t)) => {
                    last_error = Some(BackendError::Network {
                        attempts: attempt + 1,
                        message: t.to_string(),
                    });
                }
            }
        }
        Err(match last_error {
            Some(BackendError::Http { status, body }) => BackendError::Http { status, body },
            Some(BackendError::Network { message, .. }) | Some(BackendError::Config(message)) => {
                BackendError::Network {
                    attempts: self.attempts,
                    message,
                }
            }
            _ => BackendError::Network {
                attempts: self.attempts,
                message: "request never dispatched".to_string(),
            },
        })
    }

    fn model_id(&self) -> String {
        self.model_id.clone()
    }

    fn identity(&self) -> BackendIdentity {
        BackendIdentity {
            kind: "http".to_string(),
            model_id: self.model_id.clone(),
            params: json!({
                "base_url": self.base_url,
                "retry_attempts": self.attempts,
                "in_flight_limit": self.gate.max,
            }),
        }
    }

    fn in_flight_limit(&self) -> usize {
        self.gate.max
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn serve_script(responses: Vec<(u16, String)>) -> (String, Arc<AtomicUsize>, std::thread::JoinHandle<()>) {
        let server = tiny_http::Server::http("127.0.0.1:0").expect("bind test server");
        let addr = format!("http://{}", server.server_addr());
        let hits = Arc::new(AtomicUsize::new(0));
        let hits_clone = hits.clone();
        let handle = std::thread::spawn(move || {
            for (status, body) in responses {
                let request = match server.recv() {
                    Ok(r) => r,
                    Err(_) => return,
                };
                hits_clone.fetch_add(1, Ordering::SeqCst);
                let auth = request
                    .headers()
                    .iter()
                    .find(|h| h.field.equiv("Authorization"))
                    .map(|h| h.value.as_str().to_string());
                assert_eq!(auth.as_deref(), Some("Bearer test-key"));
                let response = tiny_http::Response::from_string(body)
                    .with_status_code(tiny_http::StatusCode(status));
                let _ = request.respond(response);
            }
        });
        (addr, hits, handle)
    }

    fn ok_body(text: &str) -> String {
        serde_json::json!({
            "choices": [{"text": text, "finish_reason": "stop"}],
            "usage": {"prompt_tokens": 12, "completion_tokens": 3}
        })
        .to_string()
    }

    #[test]
    fn completes_against_compatible_server() {
        let (addr, hits, handle) = serve_script(vec![(200, ok_body(" 42."))]);
        let backend = HttpBackend::new(addr, "test-key", "test-model");
        let response = backend
            .complete(&CompletionRequest::new("Q: x\nA:", 64, 0.0, "test-model"))
            .unwrap();
        assert_eq!(response.text, " 42.");
        assert_eq!(response.prompt_tokens, 12);
        assert_eq!(response.completion_tokens, 3);
        assert_eq!(hits.load(Ordering::SeqCst), 1);
        handle.join().unwrap();
    }

    #[test]
    fn retries_on_429_then_succeeds() {
        let (addr, hits, handle) = serve_script(vec![
            (429, "slow down".to_string()),
            (500, "oops".to_string()),
            (200, ok_body("fine")),
        ]);
        let backend = HttpBackend::new(addr, "test-key", "m")
            .with_retry(3, Duration::from_millis(5));
        let response = backend
            .complete(&CompletionRequest::new("p", 64, 0.0, "m"))
            .unwrap();
        assert_eq!(response.text, "fine");
        assert_eq!(hits.load(Ordering::SeqCst), 3);
        handle.join().unwrap();
    }

    #[test]
    fn non_retryable_status_surfaces_body() {
        let (addr, hits, handle) = serve_script(vec![(400, "bad request body".to_string())]);
        let backend = HttpBackend::new(addr, "test-key", "m")
            .with_retry(3, Duration::from_millis(5));
        let err = backend
            .complete(&CompletionRequest::new("p", 64, 0.0, "m"))
            .unwrap_err();
        match err {
            BackendError::Http { status, body } => {
                assert_eq!(status, 400);
                assert!(body.contains("bad request body"));
            }
            other => panic!("unexpected error: {other}"),
        }
        assert_eq!(hits.load(Ordering::SeqCst), 1);
        handle.join().unwrap();
    }

    #[test]
    fn exhausted_retries_return_last_error() {
        let (addr, hits, handle) = serve_script(vec![
            (503, "down".to_string()),
            (503, "down".to_string()),
            (503, "down".to_string()),
        ]);
        let backend = HttpBackend::new(addr, "test-key", "m")
            .with_retry(3, Duration::from_millis(5));
        let err = backend
            .complete(&CompletionRequest::new("p", 64, 0.0, "m"))
            .unwrap_err();
        assert!(matches!(err, BackendError::Http { status: 503, .. }));
        assert_eq!(hits.load(Ordering::SeqCst), 3);
        handle.join().unwrap();
    }

    #[test]
    fn from_env_reports_missing_variables() {
        std::env::remove_var(BASE_URL_VAR);
        std::env::remove_var(API_KEY_VAR);
        let Err(err) = HttpBackend::from_env("m") else {
            panic!("expected configuration error");
        };
        assert!(err.to_string().contains(BASE_URL_VAR));
    }
}
