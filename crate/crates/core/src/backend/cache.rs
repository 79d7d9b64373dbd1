//! Append-only record/replay cache wrapper.
//!
//! Responses are stored one JSON object per line, keyed by the hex SHA-256 of
//! the canonical request. Hits are served without touching the inner backend,
//! so a fully recorded run replays with zero inner calls.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::Deserialize;
use serde_json::json;

use super::{Backend, BackendError, BackendIdentity, CompletionRequest, CompletionResponse};

#[derive(Deserialize)]
struct CacheLine {
    key: String,
    request: CompletionRequest,
    response: CompletionResponse,
}

pub struct CacheBackend {
    inner: Box<dyn Backend>,
    path: PathBuf,
    entries: RwLock<HashMap<String, CompletionResponse>>,
    writer: Mutex<BufWriter<File>>,
}

impl CacheBackend {
    /// Opens (or creates) the store at `path` and wraps `inner`. Existing
    /// lines are validated against their recomputed request hash.
    pub fn open(inner: Box<dyn Backend>, path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref().to_path_buf();
        let display = path.display().to_string();
        let mut entries = HashMap::new();
        if path.exists() {
            let content = std::fs::read_to_string(&path).map_err(|source| BackendError::CacheIo {
                path: display.clone(),
                source,
            })?;
            for (idx, line) in content.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let parsed: CacheLine =
                    serde_json::from_str(line).map_err(|e| BackendError::CacheCorrupt {
                        path: display.clone(),
                        line: idx + 1,
                        message: e.to_string(),
                    })?;
                if parsed.request.cache_key() != parsed.key {
                    return Err(BackendError::CacheCorrupt {
                        path: display.clone(),
                        line: idx + 1,
                        message: "stored key does not match request hash".to_string(),
                    });
                }
                // First occurrence wins; replays stay stable if a line repeats.
                entries.entry(parsed.key).or_insert(parsed.response);
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|source| BackendError::CacheIo {
                path: display,
                source,
            })?;
        Ok(CacheBackend {
            inner,
            path,
            entries: RwLock::new(entries),
            writer: Mutex::new(BufWriter::new(file)),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache map poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Backend for CacheBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        let key = request.cache_key();
        if let Some(hit) = self.entries.read().expect("cache map poisoned").get(&key) {
            return Ok(hit.clone());
        }
        let response = self.inner.complete(request)?;
        let line = json!({
            "key": key,
            "request": serde_json::to_value(request).expect("request serializes"),
            "response": serde_json::to_value(&response).expect("response serializes"),
        });
        {
            let mut writer = self.writer.lock().expect("cache writer poisoned");
            writeln!(writer, "{line}").and_then(|_| writer.flush()).map_err(|source| {
                BackendError::CacheIo {
                    path: self.path.display().to_string(),
                    source,
                }
            })?;
        }
        self.entries
            .write()
            .expect("cache map poisoned")
            .entry(key)
            .or_insert_with(|| response.clone());
        Ok(response)
    }

    fn model_id(&self) -> String {
        self.inner.model_id()
    }

    fn identity(&self) -> BackendIdentity {
        let inner = self.inner.identity();
        BackendIdentity {
            kind: format!("cached:{}", inner.kind),
            model_id: inner.model_id.clone(),
            params: json!({
                "store": self.path.display().to_string(),
                "inner": serde_json::to_value(&inner).expect("identity serializes"),
            }),
        }
    }

    fn in_flight_limit(&self) -> usize {
        self.inner.in_flight_limit()
    }
}
