//! Provider-agnostic access to chat-completion models.
//!
//! One `Gateway` fronts whichever transport is configured — a live
//! chat-completions endpoint, a scripted fixture set, or a recording wrapper
//! around a live endpoint — and adds the cross-cutting pieces: request
//! validation, content-addressed caching, retries with exponential backoff
//! (inside the remote transport), and a semaphore bounding in-flight calls.
//! Identical requests share a digest, so caching and replay are exact.

mod backend;
mod cache;
mod digest;
mod semaphore;
mod types;

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};

pub use backend::{
    load_fixtures, write_fixture_file, Backend, BackendReply, FixtureRecord, RecordingBackend,
    RemoteBackend, RetryPolicy, ScriptedBackend, API_KEY_ENV,
};
pub use cache::ResponseCache;
pub use digest::request_digest;
pub use types::{BackendKind, ChatMessage, ChatRequest, ChatResponse, GenParams, Role, Usage};

use crate::error::Result;

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub backend: BackendKind,
    /// Response cache directory; `None` disables caching.
    pub cache_dir: Option<PathBuf>,
    pub retry: RetryPolicy,
    /// Upper bound on in-flight backend calls.
    pub concurrency_limit: usize,
    /// Whether an unknown digest on the scripted backend is an error.
    pub scripted_strict: bool,
}

impl GatewayConfig {
    pub fn new(backend: BackendKind) -> Self {
        GatewayConfig {
            backend,
            cache_dir: None,
            retry: RetryPolicy::default(),
            concurrency_limit: 4,
            scripted_strict: true,
        }
    }
}

pub struct Gateway {
    backend: Box<dyn Backend>,
    cache: Option<ResponseCache>,
    limiter: semaphore::Semaphore,
    backend_calls: AtomicU64,
}

impl Gateway {
    pub fn new(config: GatewayConfig) -> Result<Self> {
        let backend: Box<dyn Backend> = match &config.backend {
            BackendKind::Remote {
                endpoint_url,
                auth_env,
            } => Box::new(RemoteBackend::new(
                endpoint_url.clone(),
                auth_env.clone(),
                config.retry.clone(),
            )?),
            BackendKind::Scripted { fixture_path } => Box::new(ScriptedBackend::load(
                fixture_path,
                config.scripted_strict,
            )?),
            BackendKind::Recording {
                endpoint_url,
                fixture_path,
            } => {
                let inner = RemoteBackend::new(
                    endpoint_url.clone(),
                    None,
                    config.retry.clone(),
                )?;
                Box::new(RecordingBackend::new(Box::new(inner), fixture_path)?)
            }
        };
        let cache = match &config.cache_dir {
            Some(dir) => Some(ResponseCache::open(dir)?),
            None => None,
        };
        Ok(Gateway {
            backend,
            cache,
            limiter: semaphore::Semaphore::new(config.concurrency_limit),
            backend_calls: AtomicU64::new(0),
        })
    }

    /// Build a gateway straight from a backend, with optional caching and a
    /// concurrency limit. This is how tests wire in instrumented fakes.
    pub fn from_backend(backend: Box<dyn Backend>, concurrency_limit: usize) -> Self {
        Gateway {
            backend,
            cache: None,
            limiter: semaphore::Semaphore::new(concurrency_limit),
            backend_calls: AtomicU64::new(0),
        }
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    /// Number of completions that actually reached the backend (cache hits
    /// excluded).
    pub fn backend_calls(&self) -> u64 {
        self.backend_calls.load(Ordering::Relaxed)
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse> {
        request.validate()?;
        let digest = request.digest();

        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.get(&digest) {
                return Ok(hit);
            }
        }

        let reply = {
            let _permit = self.limiter.acquire();
            self.backend_calls.fetch_add(1, Ordering::Relaxed);
            self.backend.complete(request, &digest)?
        };

        let usage = reply.usage.unwrap_or(Usage {
            prompt_tokens: request
                .messages
                .iter()
                .map(|m| m.text.split_whitespace().count() as u64)
                .sum(),
            completion_tokens: reply.text.split_whitespace().count() as u64,
        });
        let response = ChatResponse {
            text: reply.text,
            model_id: request.model_id.clone(),
            usage,
            cache_hit: false,
        };

        if let Some(cache) = &self.cache {
            cache.put(&digest, &response)?;
        }
        Ok(response)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn request(text: &str) -> ChatRequest {
        ChatRequest::single_user("m", GenParams::generation(), text)
    }

    fn scripted_for(requests: &[(&ChatRequest, &str)]) -> Box<ScriptedBackend> {
        let mut fixtures = HashMap::new();
        for (req, response) in requests {
            fixtures.insert(req.digest(), response.to_string());
        }
        Box::new(ScriptedBackend::from_map(fixtures, true))
    }

    #[test]
    fn completes_from_fixture() {
        let req = request("summarize solar");
        let gateway = Gateway::from_backend(scripted_for(&[(&req, "SUMMARY: solar basics")]), 2);
        let response = gateway.complete(&req).unwrap();
        assert_eq!(response.text, "SUMMARY: solar basics");
        assert!(!response.cache_hit);
        assert!(response.usage.prompt_tokens > 0);
    }

    #[test]
    fn rejects_invalid_request_before_any_call() {
        let mut req = request("x");
        req.top_p = 2.0;
        let gateway = Gateway::from_backend(scripted_for(&[]), 1);
        let err = gateway.complete(&req).unwrap_err();
        assert_eq!(err.code(), "invalid-request");
        assert_eq!(gateway.backend_calls(), 0);
    }

    #[test]
    fn second_identical_request_hits_cache() {
        let dir = tempfile::tempdir().unwrap();
        let req = request("cached call");
        let gateway = Gateway::from_backend(scripted_for(&[(&req, "stable answer")]), 2)
            .with_cache(ResponseCache::open(dir.path()).unwrap());

        let first = gateway.complete(&req).unwrap();
        let second = gateway.complete(&req).unwrap();
        assert!(!first.cache_hit);
        assert!(second.cache_hit);
        assert_eq!(first.text, second.text);
        assert_eq!(gateway.backend_calls(), 1);
    }

    #[test]
    fn scripted_miss_surfaces() {
        let gateway = Gateway::from_backend(scripted_for(&[]), 1);
        let err = gateway.complete(&request("unknown")).unwrap_err();
        assert_eq!(err.code(), "scripted-miss");
    }
}
