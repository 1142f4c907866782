//! Backend-agnostic chat-completion client.
//!
//! Wraps a [`ChatBackend`] with prompt templating, a token-budget truncation
//! policy, a persistent completion cache (consulted at temperature 0), retry
//! with exponential backoff, and parse-and-retry helpers for structured
//! replies.

pub mod backend;
pub mod cache;
pub mod parse;
pub mod template;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

pub use backend::{
    BackendReply, ChatBackend, CountingBackend, FailOnMarker, HttpBackend, MockBackend, MockJudge,
    RenderedRequest, ScriptedBackend,
};
pub use cache::{cache_key, CacheEntry, PromptCache};
pub use parse::{parse_consensus, parse_keyword_lines, parse_ranked_list, parse_rating};
pub use parse::{AlignmentLevel, Verdict};
pub use template::{PromptVars, Template, TemplateRegistry};

use crate::error::{Error, Result};

/// Environment variable holding the API key for HTTP backends.
pub const API_KEY_ENV: &str = "AGENTGR_API_KEY";

#[derive(Debug, Clone)]
pub struct LlmSettings {
    pub temperature: f64,
    pub max_tokens: u32,
    pub max_retries: u32,
    pub retry_backoff_ms: u64,
    pub token_budget: usize,
}

impl Default for LlmSettings {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: 1024,
            max_retries: 3,
            retry_backoff_ms: 500,
            token_budget: 6000,
        }
    }
}

/// A templated completion request. Temperature and token cap default to the
/// client settings when unset.
#[derive(Debug, Clone)]
pub struct PromptRequest {
    pub template: &'static str,
    pub vars: PromptVars,
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
}

impl PromptRequest {
    pub fn new(template: &'static str) -> Self {
        Self {
            template,
            vars: PromptVars::new(),
            temperature: None,
            max_tokens: None,
        }
    }

    pub fn text(mut self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.vars = self.vars.text(name, value);
        self
    }

    pub fn list(mut self, name: impl Into<String>, items: Vec<String>) -> Self {
        self.vars = self.vars.list(name, items);
        self
    }
}

#[derive(Debug, Clone)]
pub struct Completion {
    pub text: String,
    pub backend_id: String,
    pub cached: bool,
}

/// Counters accumulated by a client; deltas around a unit of work give its
/// cost telemetry.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct TelemetrySnapshot {
    pub backend_calls: u64,
    pub cache_hits: u64,
    pub tokens: u64,
}

impl TelemetrySnapshot {
    pub fn delta_since(&self, earlier: &TelemetrySnapshot) -> TelemetrySnapshot {
        TelemetrySnapshot {
            backend_calls: self.backend_calls - earlier.backend_calls,
            cache_hits: self.cache_hits - earlier.cache_hits,
            tokens: self.tokens - earlier.tokens,
        }
    }
}

pub struct LlmClient {
    backend: Arc<dyn ChatBackend>,
    cache: Option<PromptCache>,
    registry: TemplateRegistry,
    settings: LlmSettings,
    backend_calls: AtomicU64,
    cache_hits: AtomicU64,
    tokens: AtomicU64,
}

impl LlmClient {
    pub fn new(
        backend: Arc<dyn ChatBackend>,
        cache: Option<PromptCache>,
        settings: LlmSettings,
    ) -> Self {
        Self {
            backend,
            cache,
            registry: TemplateRegistry::builtin(),
            settings,
            backend_calls: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
            tokens: AtomicU64::new(0),
        }
    }

    pub fn settings(&self) -> &LlmSettings {
        &self.settings
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }

    pub fn telemetry(&self) -> TelemetrySnapshot {
        TelemetrySnapshot {
            backend_calls: self.backend_calls.load(Ordering::SeqCst),
            cache_hits: self.cache_hits.load(Ordering::SeqCst),
            tokens: self.tokens.load(Ordering::SeqCst),
        }
    }

    /// Complete a request, consulting the cache first at temperature 0.
    pub fn complete(&self, req: &PromptRequest) -> Result<Completion> {
        self.complete_inner(req, true)
    }

    /// Complete bypassing the cache read (the reply is still written back).
    pub fn complete_fresh(&self, req: &PromptRequest) -> Result<Completion> {
        self.complete_inner(req, false)
    }

    fn complete_inner(&self, req: &PromptRequest, read_cache: bool) -> Result<Completion> {
        let template = self.registry.get(req.template)?;
        let temperature = req.temperature.unwrap_or(self.settings.temperature);
        let max_tokens = req.max_tokens.unwrap_or(self.settings.max_tokens);
        let (prompt, vars) =
            template::render_with_budget(template, &req.vars, self.settings.token_budget)?;
        let key = cache_key(
            self.backend.id(),
            template.name,
            template.version,
            &prompt,
            temperature,
        );
        let cacheable = temperature == 0.0;
        if read_cache && cacheable {
            if let Some(cache) = &self.cache {
                if let Some(text) = cache.get(&key) {
                    self.cache_hits.fetch_add(1, Ordering::SeqCst);
                    return Ok(Completion {
                        text,
                        backend_id: self.backend.id().to_string(),
                        cached: true,
                    });
                }
            }
        }

        let rendered = RenderedRequest {
            template: template.name,
            prompt: &prompt,
            vars: &vars,
            temperature,
            max_tokens,
        };
        let reply = self.call_with_retry(&rendered)?;
        if cacheable {
            if let Some(cache) = &self.cache {
                cache.put(&CacheEntry {
                    key,
                    backend_id: self.backend.id().to_string(),
                    template: template.name.to_string(),
                    template_version: template.version.to_string(),
                    temperature,
                    text: reply.text.clone(),
                    created_at: cache::unix_now(),
                })?;
            }
        }
        Ok(Completion {
            text: reply.text,
            backend_id: self.backend.id().to_string(),
            cached: false,
        })
    }

    fn call_with_retry(&self, rendered: &RenderedRequest<'_>) -> Result<BackendReply> {
        let mut attempt = 0u32;
        loop {
            self.backend_calls.fetch_add(1, Ordering::SeqCst);
            let outcome = match self.backend.complete(rendered) {
                Ok(reply) if reply.text.trim().is_empty() => Err(Error::Backend {
                    backend: self.backend.id().to_string(),
                    msg: "empty reply".into(),
                    retryable: true,
                }),
                other => other,
            };
            match outcome {
                Ok(reply) => {
                    if let Some(t) = reply.tokens {
                        self.tokens.fetch_add(t, Ordering::SeqCst);
                    }
                    return Ok(reply);
                }
                Err(e) if e.is_retryable() && attempt < self.settings.max_retries => {
                    let delay = self
                        .settings
                        .retry_backoff_ms
                        .saturating_mul(1 << attempt.min(16));
                    log::warn!(
                        "backend call failed (attempt {}): {e}; retrying in {delay}ms",
                        attempt + 1
                    );
                    std::thread::sleep(std::time::Duration::from_millis(delay));
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// Complete and parse, re-asking the backend (cache bypassed) when the
    /// reply does not parse, up to `max_retries` extra attempts.
    pub fn complete_parsed<T>(
        &self,
        req: &PromptRequest,
        what: &'static str,
        parse: impl Fn(&str) -> Option<T>,
    ) -> Result<T> {
        let mut last = self.complete(req)?;
        if let Some(v) = parse(&last.text) {
            return Ok(v);
        }
        for _ in 0..self.settings.max_retries {
            last = self.complete_fresh(req)?;
            if let Some(v) = parse(&last.text) {
                return Ok(v);
            }
        }
        Err(Error::UnparseableReply {
            what,
            raw: last.text,
        })
    }
}
