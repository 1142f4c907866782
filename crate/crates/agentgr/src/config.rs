//! Run configuration: one TOML file drives every command.
//!
//! The resolved configuration (after CLI overrides) is hashed into a
//! fingerprint that is stamped into every artifact; mixing artifacts from
//! different fingerprints is refused downstream unless forced.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::DataPaths;
use crate::error::{Error, Result};
use crate::hashutil::sha256_hex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    Hash,
    Http,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub backend: BackendKind,
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_retries: u32,
    pub in_flight_limit: usize,
    pub token_budget: usize,
    pub max_tokens: u32,
    pub retry_backoff_ms: u64,
    /// Mock-only: how the judge rules ("always" or "never" consensus).
    pub mock_judge: String,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Mock,
            endpoint: String::new(),
            model: "gpt-4o".into(),
            temperature: 0.0,
            max_retries: 3,
            in_flight_limit: 4,
            token_budget: 6000,
            max_tokens: 1024,
            retry_backoff_ms: 500,
            mock_judge: "always".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderConfig {
    pub kind: EmbedderKind,
    pub dim: usize,
    pub endpoint: String,
    pub model: String,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            kind: EmbedderKind::Hash,
            dim: 64,
            endpoint: String::new(),
            model: String::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetapathConfig {
    pub max_order: usize,
    pub top_k: usize,
}

impl Default for MetapathConfig {
    fn default() -> Self {
        Self {
            max_order: 2,
            top_k: 10,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeighborsConfig {
    pub top_k: usize,
}

impl Default for NeighborsConfig {
    fn default() -> Self {
        Self { top_k: 5 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfilingConfig {
    pub keyword_cap: usize,
}

impl Default for ProfilingConfig {
    fn default() -> Self {
        Self { keyword_cap: 8 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroupingConfig {
    /// Topic recognition; disabled writes sentinel topics (the "w/o. G"
    /// ablation).
    pub enabled: bool,
}

impl Default for GroupingConfig {
    fn default() -> Self {
        Self { enabled: true }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LeadershipConfig {
    /// Leader recognition; disabled omits leader cues everywhere (the
    /// "w/o. L" ablation).
    pub enabled: bool,
}

impl Default for LeadershipConfig {
    fn default() -> Self {
        Self { enabled: true }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicConfig {
    pub max_rounds: u32,
}

impl Default for DynamicConfig {
    fn default() -> Self {
        Self { max_rounds: 3 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub k_values: Vec<usize>,
    pub n_negatives: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k_values: vec![5, 10],
            n_negatives: 50,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataPaths,
    #[serde(default)]
    pub llm: LlmConfig,
    #[serde(default)]
    pub embedder: EmbedderConfig,
    #[serde(default)]
    pub metapath: MetapathConfig,
    #[serde(default)]
    pub neighbors: NeighborsConfig,
    #[serde(default)]
    pub profiling: ProfilingConfig,
    #[serde(default)]
    pub grouping: GroupingConfig,
    #[serde(default)]
    pub leadership: LeadershipConfig,
    #[serde(default)]
    pub dynamic: DynamicConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_cache_dir")]
    pub cache_dir: PathBuf,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_seed() -> u64 {
    42
}

fn default_cache_dir() -> PathBuf {
    PathBuf::from("cache")
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: RunConfig =
            toml::from_str(&raw).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.metapath.max_order) {
            return Err(Error::Config(format!(
                "metapath.max_order must be 1, 2 or 3, got {}",
                self.metapath.max_order
            )));
        }
        if self.eval.n_negatives < 1 {
            return Err(Error::Config("eval.n_negatives must be >= 1".into()));
        }
        if self.dynamic.max_rounds < 1 {
            return Err(Error::Config("dynamic.max_rounds must be >= 1".into()));
        }
        if self.eval.k_values.is_empty() || self.eval.k_values.contains(&0) {
            return Err(Error::Config(
                "eval.k_values must be non-empty positive".into(),
            ));
        }
        if self.profiling.keyword_cap < 1 {
            return Err(Error::Config("profiling.keyword_cap must be >= 1".into()));
        }
        if self.metapath.top_k < 1 || self.neighbors.top_k < 1 {
            return Err(Error::Config("top_k values must be >= 1".into()));
        }
        if self.embedder.dim < 2 {
            return Err(Error::Config("embedder.dim must be >= 2".into()));
        }
        if self.llm.temperature.is_nan() || self.llm.temperature < 0.0 {
            return Err(Error::Config("llm.temperature must be >= 0".into()));
        }
        if self.llm.backend == BackendKind::Http && self.llm.endpoint.is_empty() {
            return Err(Error::Config(
                "llm.endpoint required for the http backend".into(),
            ));
        }
        if self.embedder.kind == EmbedderKind::Http && self.embedder.endpoint.is_empty() {
            return Err(Error::Config(
                "embedder.endpoint required for the http embedder".into(),
            ));
        }
        match self.llm.mock_judge.as_str() {
            "always" | "never" => {}
            other => {
                return Err(Error::Config(format!(
                    "llm.mock_judge must be \"always\" or \"never\", got {other:?}"
                )))
            }
        }
        Ok(())
    }

    /// Short content hash of the resolved configuration.
    ///
    /// Artifact locations (output_dir, cache_dir) are excluded: where results
    /// are written does not change what they contain, and equivalent runs
    /// into different directories must produce identical artifacts.
    pub fn fingerprint(&self) -> String {
        let mut semantic = self.clone();
        semantic.output_dir = PathBuf::new();
        semantic.cache_dir = PathBuf::new();
        let body = serde_json::to_string(&semantic).expect("config serializes");
        sha256_hex(&[body.as_bytes()])[..16].to_string()
    }
}
