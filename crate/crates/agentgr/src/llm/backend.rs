//! Chat-completion backends.
//!
//! `HttpBackend` speaks the common JSON chat-completion wire protocol;
//! `MockBackend` is a deterministic stand-in that makes the whole pipeline
//! reproducible at desk scale. `ScriptedBackend`, `CountingBackend` and
//! `FailOnMarker` support tests.

use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};

use serde_json::json;

use crate::error::{Error, Result};
use crate::hashutil::stable_hash;
use crate::llm::template::{names, PromptVars};

/// A fully rendered request as seen by a backend.
#[derive(Debug)]
pub struct RenderedRequest<'a> {
    pub template: &'a str,
    pub prompt: &'a str,
    pub vars: &'a PromptVars,
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone)]
pub struct BackendReply {
    pub text: String,
    /// Total token usage when the serving endpoint reports it.
    pub tokens: Option<u64>,
}

pub trait ChatBackend: Send + Sync {
    /// Stable identifier; participates in completion cache keys.
    fn id(&self) -> &str;
    fn complete(&self, req: &RenderedRequest<'_>) -> Result<BackendReply>;
}

// ---------------------------------------------------------------------------
// HTTP backend

/// Counting semaphore bounding in-flight backend calls.
struct Slots {
    state: Mutex<usize>,
    cv: Condvar,
}

impl Slots {
    fn new(n: usize) -> Self {
        Self {
            state: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.state.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        SlotGuard { slots: self }
    }
}

struct SlotGuard<'a> {
    slots: &'a Slots,
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.slots.state.lock().unwrap() += 1;
        self.slots.cv.notify_one();
    }
}

/// Client for JSON chat-completion endpoints
/// (`{model, messages, temperature, max_tokens}` in,
/// `choices[0].message.content` out).
pub struct HttpBackend {
    id: String,
    endpoint: String,
    model: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    slots: Slots,
}

impl HttpBackend {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        api_key: Option<String>,
        in_flight_limit: usize,
    ) -> Result<Self> {
        let endpoint = endpoint.into();
        let model = model.into();
        if endpoint.is_empty() {
            return Err(Error::Config(
                "http backend requires a non-empty endpoint".into(),
            ));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(120))
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(Self {
            id: format!("http:{model}"),
            endpoint,
            model,
            api_key,
            client,
            slots: Slots::new(in_flight_limit),
        })
    }

    fn backend_err(&self, msg: impl Into<String>, retryable: bool) -> Error {
        Error::Backend {
            backend: self.id.clone(),
            msg: msg.into(),
            retryable,
        }
    }
}

impl ChatBackend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, req: &RenderedRequest<'_>) -> Result<BackendReply> {
        let _slot = self.slots.acquire();
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        let mut http = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            http = http.bearer_auth(key);
        }
        let resp = http
            .send()
            .map_err(|e| self.backend_err(format!("request failed: {e}"), true))?;
        let status = resp.status();
        if !status.is_success() {
            let retryable = matches!(status.as_u16(), 408 | 429 | 500 | 502 | 503 | 504);
            return Err(self.backend_err(format!("status {status}"), retryable));
        }
        let payload: serde_json::Value = resp
            .json()
            .map_err(|e| self.backend_err(format!("bad json reply: {e}"), false))?;
        let text = payload["choices"][0]["message"]["content"]
            .as_str()
            .unwrap_or("")
            .to_string();
        let tokens = payload["usage"]["total_tokens"].as_u64();
        Ok(BackendReply { text, tokens })
    }
}

// ---------------------------------------------------------------------------
// Mock backend

/// How the mock judge rules on discussion rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MockJudge {
    Always,
    Never,
    AfterRound(u32),
}

/// Deterministic backend: every reply is a pure function of the template
/// name, the bound variables and the seed, so full-pipeline runs are
/// byte-identical across processes.
pub struct MockBackend {
    seed: u64,
    judge: MockJudge,
    id: String,
}

// scaffold words the mock itself injects; filtered out of mock keywords so
// extracted keywords stay user-specific
const MOCK_SCAFFOLD: &[&str] = &[
    "preference",
    "evidence",
    "unified",
    "profile",
    "primary",
    "auxiliary",
    "direct",
    "interactions",
    "order",
    "none",
    "observable",
    "preferences",
    "walks",
    "observed",
];

impl MockBackend {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            judge: MockJudge::Always,
            id: format!("mock:{seed}:always"),
        }
    }

    /// The id names the judge mode too: replies are a function of (seed,
    /// judge), and the cache key must see all of it.
    pub fn with_judge(mut self, judge: MockJudge) -> Self {
        self.judge = judge;
        let tag = match judge {
            MockJudge::Always => "always".to_string(),
            MockJudge::Never => "never".to_string(),
            MockJudge::AfterRound(n) => format!("after{n}"),
        };
        self.id = format!("mock:{}:{tag}", self.seed);
        self
    }

    fn candidate_ids(vars: &PromptVars) -> Vec<String> {
        vars.get_list("candidates")
            .unwrap_or(&[])
            .iter()
            .map(|entry| entry.split(':').next().unwrap_or(entry).trim().to_string())
            .filter(|id| !id.is_empty())
            .collect()
    }

    fn rank_by_hash(&self, mut ids: Vec<String>) -> String {
        ids.sort_by_key(|id| (stable_hash(self.seed, &["rank", id]), id.clone()));
        ids.join(", ")
    }

    /// Borda aggregation of the member rankings; preserves any ranking all
    /// members agree on and is the identity for a single member.
    fn rerank(&self, vars: &PromptVars) -> String {
        let candidates = Self::candidate_ids(vars);
        let allowed: std::collections::HashSet<&str> =
            candidates.iter().map(String::as_str).collect();
        let mut scores: std::collections::BTreeMap<String, u64> = std::collections::BTreeMap::new();
        for entry in vars.get_list("member_rankings").unwrap_or(&[]) {
            let ranking = entry.split_once(':').map(|(_, r)| r).unwrap_or(entry);
            let ranked: Vec<&str> = ranking
                .split(|ch: char| !(ch.is_alphanumeric() || ch == '_' || ch == '-' || ch == '.'))
                .filter(|tok| !tok.is_empty() && allowed.contains(tok))
                .collect();
            let n = ranked.len() as u64;
            for (pos, id) in ranked.iter().enumerate() {
                *scores.entry(id.to_string()).or_insert(0) += n - pos as u64;
            }
        }
        let mut order = candidates;
        order.sort_by(|a, b| {
            let sa = scores.get(a).copied().unwrap_or(0);
            let sb = scores.get(b).copied().unwrap_or(0);
            sb.cmp(&sa).then_with(|| a.cmp(b))
        });
        order.join(", ")
    }

    fn keywords(&self, vars: &PromptVars) -> String {
        let source = vars.get_text("preferences").unwrap_or("");
        let mut seen = std::collections::HashSet::new();
        let mut lines = Vec::new();
        for tok in source
            .split(|ch: char| !(ch.is_alphanumeric() || ch == '_' || ch == '-'))
            .filter(|t| t.len() >= 3)
        {
            let t = tok.to_lowercase();
            if MOCK_SCAFFOLD.contains(&t.as_str()) || t.chars().all(|c| c.is_ascii_digit()) {
                continue;
            }
            if seen.insert(t.clone()) {
                lines.push(format!("{t}: recurring signal in the interaction history"));
                if lines.len() == 8 {
                    break;
                }
            }
        }
        if lines.is_empty() {
            "general: no distinctive signals observed".to_string()
        } else {
            lines.join("\n")
        }
    }

    fn utterance(&self, vars: &PromptVars) -> String {
        let user = vars.get_text("user_id").unwrap_or("member");
        let mut ids = Self::candidate_ids(vars);
        ids.sort_by_key(|id| (stable_hash(self.seed, &["utter", user, id]), id.clone()));
        ids.truncate(3);
        let profile = vars.get_text("profile").unwrap_or("");
        let gist: String = profile.chars().take(60).collect();
        format!(
            "As {user}, I favor {} given my tastes ({gist}).",
            ids.join(", ")
        )
    }
}

impl ChatBackend for MockBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, req: &RenderedRequest<'_>) -> Result<BackendReply> {
        let vars = req.vars;
        let text = match req.template {
            names::MEMBER_ALIGNMENT => {
                let bucket = stable_hash(self.seed, &["rate", &vars.canonical()]) % 3;
                ["high", "medium", "low"][bucket as usize].to_string()
            }
            names::VIEW_PREFERENCE => {
                let evidence = vars.get_list("evidence").unwrap_or(&[]).join(" | ");
                format!("Observed preference evidence: {evidence}")
            }
            names::INTEGRATE_PREFERENCES => format!(
                "Unified profile. Primary: {} Auxiliary: {}",
                vars.get_text("user_view").unwrap_or(""),
                vars.get_text("group_view").unwrap_or("")
            ),
            names::EXTRACT_KEYWORDS => self.keywords(vars),
            names::INTRA_TOPIC => {
                let mut items: Vec<String> = vars.get_list("items").unwrap_or(&[]).to_vec();
                items.sort();
                format!("Group interest profile: {}", items.join("; "))
            }
            names::INTER_TOPIC => {
                let topics = vars.get_list("neighbor_topics").unwrap_or(&[]).join(" | ");
                format!("Common themes across similar groups: {topics}")
            }
            names::FUSE_TOPIC => format!(
                "Fused topic. Core: {} Context: {}",
                vars.get_text("intra").unwrap_or(""),
                vars.get_text("inter").unwrap_or("")
            ),
            names::MEMBER_RANK | names::DISCUSSION_SUMMARY => {
                self.rank_by_hash(Self::candidate_ids(vars))
            }
            names::GROUP_RERANK => self.rerank(vars),
            names::DISCUSSION_UTTERANCE => self.utterance(vars),
            names::CONSENSUS_JUDGE => {
                let round: u32 = vars
                    .get_text("round")
                    .and_then(|r| r.trim().parse().ok())
                    .unwrap_or(1);
                let yes = match self.judge {
                    MockJudge::Always => true,
                    MockJudge::Never => false,
                    MockJudge::AfterRound(n) => round >= n,
                };
                if yes {
                    "CONSENSUS: YES"
                } else {
                    "CONSENSUS: NO"
                }
                .to_string()
            }
            other => format!(
                "mock reply {:016x}",
                stable_hash(self.seed, &[other, &vars.canonical()])
            ),
        };
        Ok(BackendReply { text, tokens: None })
    }
}

// ---------------------------------------------------------------------------
// Test backends

/// Replays a fixed sequence of replies, repeating the last one when drained.
pub struct ScriptedBackend {
    replies: Vec<String>,
    cursor: AtomicUsize,
}

impl ScriptedBackend {
    pub fn new(replies: Vec<String>) -> Self {
        assert!(
            !replies.is_empty(),
            "scripted backend needs at least one reply"
        );
        Self {
            replies,
            cursor: AtomicUsize::new(0),
        }
    }
}

impl ChatBackend for ScriptedBackend {
    fn id(&self) -> &str {
        "scripted"
    }

    fn complete(&self, _req: &RenderedRequest<'_>) -> Result<BackendReply> {
        let i = self.cursor.fetch_add(1, Ordering::SeqCst);
        let text = self.replies[i.min(self.replies.len() - 1)].clone();
        Ok(BackendReply { text, tokens: None })
    }
}

/// Wraps another backend and counts how many completions actually reach it.
pub struct CountingBackend {
    inner: Arc<dyn ChatBackend>,
    calls: AtomicU64,
}

impl CountingBackend {
    pub fn new(inner: Arc<dyn ChatBackend>) -> Self {
        Self {
            inner,
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatBackend for CountingBackend {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn complete(&self, req: &RenderedRequest<'_>) -> Result<BackendReply> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(req)
    }
}

/// Fails any request whose rendered prompt contains the marker; everything
/// else is delegated. Lets tests make specific groups' calls fail.
pub struct FailOnMarker {
    inner: Arc<dyn ChatBackend>,
    marker: String,
}

impl FailOnMarker {
    pub fn new(inner: Arc<dyn ChatBackend>, marker: impl Into<String>) -> Self {
        Self {
            inner,
            marker: marker.into(),
        }
    }
}

impl ChatBackend for FailOnMarker {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn complete(&self, req: &RenderedRequest<'_>) -> Result<BackendReply> {
        if req.prompt.contains(&self.marker) {
            return Err(Error::Backend {
                backend: "fail-on-marker".into(),
                msg: format!("prompt contains {:?}", self.marker),
                retryable: false,
            });
        }
        self.inner.complete(req)
    }
}
