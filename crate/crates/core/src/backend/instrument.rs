//! Transparent backend wrappers for call counting and prompt capture.
//!
//! Both delegate identity to the inner backend so instrumented runs produce
//! reports identical to uninstrumented ones.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use super::{Backend, BackendError, BackendIdentity, CompletionRequest, CompletionResponse};

pub struct CountingBackend {
    inner: Box<dyn Backend>,
    calls: Arc<AtomicUsize>,
}

impl CountingBackend {
    pub fn new(inner: Box<dyn Backend>) -> Self {
        CountingBackend {
            inner,
            calls: Arc::new(AtomicUsize::new(0)),
        }
    }

    /// Shared counter handle; survives moving the backend into a wrapper.
    pub fn calls(&self) -> Arc<AtomicUsize> {
        self.calls.clone()
    }
}

impl Backend for CountingBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(request)
    }
    fn model_id(&self) -> String {
        self.inner.model_id()
    }
    fn identity(&self) -> BackendIdentity {
        self.inner.identity()
    }
    fn in_flight_limit(&self) -> usize {
        self.inner.in_flight_limit()
    }
}

pub struct CapturingBackend {
    inner: Box<dyn Backend>,
    prompts: Arc<Mutex<Vec<String>>>,
}

impl CapturingBackend {
    pub fn new(inner: Box<dyn Backend>) -> Self {
        CapturingBackend {
            inner,
            prompts: Arc::new(Mutex::new(Vec::new())),
        }
    }

    /// Shared log of every request prompt, in call order.
    pub fn prompts(&self) -> Arc<Mutex<Vec<String>>> {
        self.prompts.clone()
    }
}

impl Backend for CapturingBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        self.prompts
            .lock()
            .expect("prompt log poisoned")
            .push(request.prompt.clone());
        self.inner.complete(request)
    }
    fn model_id(&self) -> String {
        self.inner.model_id()
    }
    fn identity(&self) -> BackendIdentity {
        self.inner.identity()
    }
    fn in_flight_limit(&self) -> usize {
        self.inner.in_flight_limit()
    }
}
