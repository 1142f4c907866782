//! Stage drivers and artifact persistence.
//!
//! Stages are explicit so ablation variants are just config flags plus
//! re-runs: ingest -> metapath -> profile -> topics -> leaders -> recommend
//! -> evaluate. Every artifact is stamped with the config fingerprint; a
//! stage refuses prerequisites from a different fingerprint so stale runs
//! cannot silently mix.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::config::{BackendKind, EmbedderKind, RunConfig};
use crate::dataset::{
    leave_one_out_split, load_catalog, load_interactions, sample_candidates, Catalog,
    EvaluationSplit, InteractionOrder, InteractionStore, TestCase,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, render_table, MetricReport};
use crate::grouping::{
    fuse_topic, inter_topic, intra_topic, neighbor_groups, select_leader, ContextStore,
    GroupContext, HashEmbedder, HttpEmbedder, TextEmbedder, NO_TOPIC,
};
use crate::llm::{
    HttpBackend, LlmClient, LlmSettings, MockBackend, MockJudge, PromptCache, API_KEY_ENV,
};
use crate::metapath::{build_member_alignment, build_metapaths, item_lines, MetaPathSet};
use crate::profiling::{profile_user, ProfileStore, UserProfile};
use crate::simulation::{
    recommend_all, GroupFailure, GroupRecommendation, GroupTelemetry, RecommendOutcome, Strategy,
};
use crate::sparse::SparseMatrix;

// ---------------------------------------------------------------------------
// Artifact documents

#[derive(Debug, Serialize, Deserialize)]
struct TestCaseDoc {
    group: String,
    positive: String,
    candidates: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SplitManifest {
    fingerprint: String,
    seed: u64,
    n_negatives: usize,
    exhausted_candidates: usize,
    test_cases: Vec<TestCaseDoc>,
}

type Triplet = (String, String, u64);

#[derive(Debug, Serialize, Deserialize)]
struct MetapathDoc {
    fingerprint: String,
    max_order: usize,
    /// order -> (user id, item id, walk count), both views
    user_view: BTreeMap<String, Vec<Triplet>>,
    group_view: BTreeMap<String, Vec<Triplet>>,
    /// membership edges rated high (after fallback policy)
    selected_members: Vec<(String, String)>,
    ratings: Vec<RatingDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RatingDoc {
    group: String,
    user: String,
    level: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct LeadersDoc {
    fingerprint: String,
    enabled: bool,
    leaders: BTreeMap<String, String>,
}

/// One line of a results file.
#[derive(Debug, Serialize, Deserialize)]
pub struct ResultRecord {
    pub group_id: String,
    pub strategy: Strategy,
    pub ranked_items: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rounds_used: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub consensus: Option<bool>,
    pub telemetry: RecordTelemetry,
    pub fingerprint: String,
}

/// Deterministic per-group costs; wall time lives in the telemetry summary
/// file so results stay byte-identical across equivalent runs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RecordTelemetry {
    pub backend_calls: u64,
    pub cache_hits: u64,
    pub tokens: u64,
}

#[derive(Debug, Serialize)]
struct TelemetrySummary<'a> {
    fingerprint: &'a str,
    strategy: &'a str,
    total_backend_calls: u64,
    total_cache_hits: u64,
    total_tokens: u64,
    total_wall_ms: u64,
    per_group: &'a [GroupTelemetry],
    failures: &'a [GroupFailure],
}

// ---------------------------------------------------------------------------
// Pipeline

pub struct Pipeline {
    pub config: RunConfig,
    pub fingerprint: String,
}

fn write_text(path: &Path, body: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, stage: &'static str) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingArtifact {
            stage,
            hint: format!("{} not found; run the {stage} step first", path.display()),
        });
    }
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&raw).map_err(|e| Error::Data(format!("corrupt {}: {e}", path.display())))
}

impl Pipeline {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let fingerprint = config.fingerprint();
        Ok(Self {
            config,
            fingerprint,
        })
    }

    fn out(&self, name: &str) -> PathBuf {
        self.config.output_dir.join(name)
    }

    fn check_fingerprint(&self, found: &str, what: &str) -> Result<()> {
        if found != self.fingerprint {
            return Err(Error::FingerprintMismatch(format!(
                "{what} was built with config {found}, current config is {}; re-run the earlier stages (or pass --force to evaluate)",
                self.fingerprint
            )));
        }
        Ok(())
    }

    /// Chat client per the resolved config. Backend overrides must be folded
    /// into the config before the pipeline is built so the fingerprint sees
    /// them.
    pub fn make_client(&self) -> Result<LlmClient> {
        let backend: Arc<dyn crate::llm::ChatBackend> = match self.config.llm.backend {
            BackendKind::Mock => {
                let judge = match self.config.llm.mock_judge.as_str() {
                    "never" => MockJudge::Never,
                    _ => MockJudge::Always,
                };
                Arc::new(MockBackend::new(self.config.seed).with_judge(judge))
            }
            BackendKind::Http => {
                if self.config.llm.endpoint.is_empty() {
                    return Err(Error::Config(
                        "llm.endpoint required for the http backend".into(),
                    ));
                }
                Arc::new(HttpBackend::new(
                    self.config.llm.endpoint.clone(),
                    self.config.llm.model.clone(),
                    std::env::var(API_KEY_ENV).ok(),
                    self.config.llm.in_flight_limit,
                )?)
            }
        };
        let cache = PromptCache::open(&self.config.cache_dir)?;
        Ok(LlmClient::new(
            backend,
            Some(cache),
            LlmSettings {
                temperature: self.config.llm.temperature,
                max_tokens: self.config.llm.max_tokens,
                max_retries: self.config.llm.max_retries,
                retry_backoff_ms: self.config.llm.retry_backoff_ms,
                token_budget: self.config.llm.token_budget,
            },
        ))
    }

    pub fn make_embedder(&self) -> Result<Box<dyn TextEmbedder>> {
        match self.config.embedder.kind {
            EmbedderKind::Hash => Ok(Box::new(HashEmbedder::new(
                self.config.seed,
                self.config.embedder.dim,
            ))),
            EmbedderKind::Http => Ok(Box::new(HttpEmbedder::new(
                self.config.embedder.endpoint.clone(),
                self.config.embedder.model.clone(),
                std::env::var(API_KEY_ENV).ok(),
            )?)),
        }
    }

    fn load_dataset(&self) -> Result<(Catalog, InteractionStore)> {
        let (catalog, _) = load_catalog(&self.config.data)?;
        let store = load_interactions(&catalog, &self.config.data)?;
        Ok((catalog, store))
    }

    // -- ingest -------------------------------------------------------------

    /// Split, sample candidates, and write the split manifest.
    pub fn ingest(&self) -> Result<PathBuf> {
        let (catalog, store) = self.load_dataset()?;
        let mut split = leave_one_out_split(&store, InteractionOrder::TimestampThenFile);
        let exhausted = sample_candidates(
            &mut split,
            &store,
            &catalog,
            self.config.eval.n_negatives,
            self.config.seed,
        );
        let manifest = SplitManifest {
            fingerprint: self.fingerprint.clone(),
            seed: self.config.seed,
            n_negatives: self.config.eval.n_negatives,
            exhausted_candidates: exhausted,
            test_cases: split
                .test_cases
                .iter()
                .map(|case| TestCaseDoc {
                    group: catalog.group_id(case.group).to_string(),
                    positive: catalog.item_id(case.positive).to_string(),
                    candidates: case
                        .candidates
                        .iter()
                        .map(|&i| catalog.item_id(i).to_string())
                        .collect(),
                })
                .collect(),
        };
        let path = self.out("split.json");
        write_text(
            &path,
            &(serde_json::to_string_pretty(&manifest).unwrap() + "\n"),
        )?;
        log::info!(
            "split: {} test cases ({} with exhausted candidate pools)",
            manifest.test_cases.len(),
            exhausted
        );
        Ok(path)
    }

    /// Reload the split from its manifest against a freshly loaded dataset.
    fn load_split(&self, catalog: &Catalog, store: &InteractionStore) -> Result<EvaluationSplit> {
        let manifest: SplitManifest = read_json(&self.out("split.json"), "ingest")?;
        self.check_fingerprint(&manifest.fingerprint, "split.json")?;
        let mut held: HashSet<(usize, usize)> = HashSet::new();
        let mut test_cases = Vec::with_capacity(manifest.test_cases.len());
        for doc in &manifest.test_cases {
            let group = catalog.group_index(&doc.group).ok_or_else(|| {
                Error::Data(format!("split references unknown group {:?}", doc.group))
            })?;
            let positive = catalog.item_index(&doc.positive).ok_or_else(|| {
                Error::Data(format!("split references unknown item {:?}", doc.positive))
            })?;
            let candidates = doc
                .candidates
                .iter()
                .map(|id| {
                    catalog
                        .item_index(id)
                        .ok_or_else(|| Error::Data(format!("split references unknown item {id:?}")))
                })
                .collect::<Result<Vec<usize>>>()?;
            held.insert((group, positive));
            test_cases.push(TestCase {
                group,
                positive,
                candidates,
            });
        }
        let train = store.without_pairs(&held);
        Ok(EvaluationSplit { train, test_cases })
    }

    // -- metapath stage -----------------------------------------------------

    pub fn stage_metapath(&self, client: &LlmClient) -> Result<()> {
        let (catalog, store) = self.load_dataset()?;
        let split = self.load_split(&catalog, &store)?;
        let train = &split.train;

        // ratings (and thus backend calls) only matter from order 2 up
        let (alignment_pairs, ratings, selected) = if self.config.metapath.max_order >= 2 {
            let alignment = build_member_alignment(client, &catalog, train)?;
            let pairs: Vec<(String, String)> = alignment
                .selected
                .iter()
                .map(|(g, u, _)| {
                    (
                        catalog.group_id(g).to_string(),
                        catalog.user_id(u).to_string(),
                    )
                })
                .collect();
            let ratings: Vec<RatingDoc> = alignment
                .ratings
                .iter()
                .map(|(&(g, u), level)| RatingDoc {
                    group: catalog.group_id(g).to_string(),
                    user: catalog.user_id(u).to_string(),
                    level: level.as_str().to_string(),
                })
                .collect();
            (pairs, ratings, alignment.selected)
        } else {
            (
                Vec::new(),
                Vec::new(),
                SparseMatrix::zero(catalog.n_groups(), catalog.n_users()),
            )
        };

        let set = build_metapaths(train, &selected, self.config.metapath.max_order)?;
        let view_doc = |view: &BTreeMap<usize, SparseMatrix>| -> BTreeMap<String, Vec<Triplet>> {
            view.iter()
                .map(|(&h, m)| {
                    let triplets = m
                        .iter()
                        .map(|(u, i, c)| {
                            (
                                catalog.user_id(u).to_string(),
                                catalog.item_id(i).to_string(),
                                c,
                            )
                        })
                        .collect();
                    (h.to_string(), triplets)
                })
                .collect()
        };
        let doc = MetapathDoc {
            fingerprint: self.fingerprint.clone(),
            max_order: set.max_order,
            user_view: view_doc(&set.user_view),
            group_view: view_doc(&set.group_view),
            selected_members: alignment_pairs,
            ratings,
        };
        write_text(
            &self.out("metapaths.json"),
            &(serde_json::to_string(&doc).unwrap() + "\n"),
        )?;
        log::info!(
            "metapaths: user view orders {:?}, group view orders {:?}",
            set.user_view.keys().collect::<Vec<_>>(),
            set.group_view.keys().collect::<Vec<_>>()
        );
        Ok(())
    }

    fn load_metapaths(&self, catalog: &Catalog) -> Result<MetaPathSet> {
        let doc: MetapathDoc = read_json(&self.out("metapaths.json"), "metapath")?;
        self.check_fingerprint(&doc.fingerprint, "metapaths.json")?;
        let parse_view = |view: &BTreeMap<String, Vec<Triplet>>,
                          rows: usize,
                          cols: usize|
         -> Result<BTreeMap<usize, SparseMatrix>> {
            let mut out = BTreeMap::new();
            for (h, triplets) in view {
                let order: usize = h
                    .parse()
                    .map_err(|_| Error::Data(format!("bad meta-path order key {h:?}")))?;
                let resolved = triplets
                    .iter()
                    .map(|(u, i, c)| {
                        let user = catalog.user_index(u).ok_or_else(|| {
                            Error::Data(format!("metapaths reference unknown user {u:?}"))
                        })?;
                        let item = catalog.item_index(i).ok_or_else(|| {
                            Error::Data(format!("metapaths reference unknown item {i:?}"))
                        })?;
                        Ok((user, item, *c))
                    })
                    .collect::<Result<Vec<_>>>()?;
                out.insert(order, SparseMatrix::from_triplets(rows, cols, &resolved));
            }
            Ok(out)
        };
        Ok(MetaPathSet {
            user_view: parse_view(&doc.user_view, catalog.n_users(), catalog.n_items())?,
            group_view: parse_view(&doc.group_view, catalog.n_users(), catalog.n_items())?,
            max_order: doc.max_order,
        })
    }

    // -- profile stage ------------------------------------------------------

    /// Profile every user who belongs to at least one group (the users who
    /// can appear in a simulation). Existing profiles with the current
    /// fingerprint are reused.
    pub fn stage_profile(&self, client: &LlmClient) -> Result<()> {
        let (catalog, store) = self.load_dataset()?;
        let metapaths = self.load_metapaths(&catalog)?;
        let profile_store = ProfileStore::open(self.out("profiles"))?;
        let mut member_users: Vec<usize> = store.b.iter().map(|(_, u, _)| u).collect();
        member_users.sort_unstable();
        member_users.dedup();
        let mut built = 0usize;
        let mut reused = 0usize;
        for &user in &member_users {
            let user_id = catalog.user_id(user);
            if let Some(existing) = profile_store.load(user_id)? {
                if existing.fingerprint == self.fingerprint {
                    reused += 1;
                    continue;
                }
            }
            let profile = profile_user(
                client,
                user,
                &metapaths,
                &catalog,
                self.config.metapath.top_k,
                self.config.profiling.keyword_cap,
                &self.fingerprint,
            )?;
            profile_store.save(&profile)?;
            built += 1;
        }
        log::info!(
            "profiles: {built} built, {reused} reused, {} users",
            member_users.len()
        );
        Ok(())
    }

    fn load_profiles(
        &self,
        catalog: &Catalog,
        store: &InteractionStore,
    ) -> Result<BTreeMap<String, UserProfile>> {
        let dir = self.out("profiles");
        if !dir.exists() {
            return Err(Error::MissingArtifact {
                stage: "profile",
                hint: format!("{} not found; run the profile step first", dir.display()),
            });
        }
        let profile_store = ProfileStore::open(&dir)?;
        let mut member_users: Vec<usize> = store.b.iter().map(|(_, u, _)| u).collect();
        member_users.sort_unstable();
        member_users.dedup();
        let mut out = BTreeMap::new();
        for user in member_users {
            let user_id = catalog.user_id(user);
            if let Some(profile) = profile_store.load(user_id)? {
                self.check_fingerprint(&profile.fingerprint, &format!("profile {user_id:?}"))?;
                out.insert(user_id.to_string(), profile);
            }
        }
        if out.is_empty() {
            return Err(Error::MissingArtifact {
                stage: "profile",
                hint: "no profiles on disk; run the profile step first".into(),
            });
        }
        Ok(out)
    }

    // -- topics stage ---------------------------------------------------------

    /// Write one group-context document per group. With grouping disabled the
    /// documents carry sentinel topics and cost no backend calls.
    pub fn stage_topics(&self, client: &LlmClient) -> Result<()> {
        let (catalog, store) = self.load_dataset()?;
        let split = self.load_split(&catalog, &store)?;
        let train = &split.train;
        let context_store = ContextStore::open(self.out("contexts"))?;

        let enabled = self.config.grouping.enabled;
        let mut intra: Vec<String> = Vec::with_capacity(catalog.n_groups());
        for g in 0..catalog.n_groups() {
            if !enabled {
                intra.push(NO_TOPIC.to_string());
                continue;
            }
            let lines = item_lines(&catalog, &train.group_items(g));
            intra.push(intra_topic(client, &lines)?);
        }

        for g in 0..catalog.n_groups() {
            let neighbors = if enabled {
                neighbor_groups(g, &train.y, self.config.neighbors.top_k)
            } else {
                Vec::new()
            };
            let neighbor_topics: Vec<String> =
                neighbors.iter().map(|&n| intra[n].clone()).collect();
            let inter = if enabled {
                inter_topic(client, &neighbor_topics)?
            } else {
                NO_TOPIC.to_string()
            };
            let topic = fuse_topic(client, &intra[g], &inter)?;
            context_store.save(&GroupContext {
                group_id: catalog.group_id(g).to_string(),
                intra_topic: intra[g].clone(),
                inter_topic: inter,
                topic,
                neighbors: neighbors
                    .iter()
                    .map(|&n| catalog.group_id(n).to_string())
                    .collect(),
                leader: None,
                fingerprint: self.fingerprint.clone(),
            })?;
        }
        log::info!("topics: {} group contexts written", catalog.n_groups());
        Ok(())
    }

    fn load_contexts(&self, catalog: &Catalog) -> Result<BTreeMap<String, GroupContext>> {
        let dir = self.out("contexts");
        if !dir.exists() {
            return Err(Error::MissingArtifact {
                stage: "topics",
                hint: format!("{} not found; run the topics step first", dir.display()),
            });
        }
        let context_store = ContextStore::open(&dir)?;
        let mut out = BTreeMap::new();
        for g in 0..catalog.n_groups() {
            let group_id = catalog.group_id(g);
            if let Some(context) = context_store.load(group_id)? {
                self.check_fingerprint(&context.fingerprint, &format!("context {group_id:?}"))?;
                out.insert(group_id.to_string(), context);
            }
        }
        if out.is_empty() {
            return Err(Error::MissingArtifact {
                stage: "topics",
                hint: "no group contexts on disk; run the topics step first".into(),
            });
        }
        Ok(out)
    }

    // -- leaders stage --------------------------------------------------------

    /// Resolve a leader per group from embedding similarity and update the
    /// context documents. With leadership disabled the leader field stays
    /// omitted and only the marker document is written.
    pub fn stage_leaders(&self, embedder: &dyn TextEmbedder) -> Result<()> {
        let (catalog, store) = self.load_dataset()?;
        let contexts = self.load_contexts(&catalog)?;
        let context_store = ContextStore::open(self.out("contexts"))?;
        let mut leaders: BTreeMap<String, String> = BTreeMap::new();

        if self.config.leadership.enabled {
            let profiles = self.load_profiles(&catalog, &store)?;
            for g in 0..catalog.n_groups() {
                let group_id = catalog.group_id(g);
                let mut context =
                    contexts
                        .get(group_id)
                        .cloned()
                        .ok_or_else(|| Error::MissingArtifact {
                            stage: "topics",
                            hint: format!("no context for group {group_id:?}"),
                        })?;
                let topic_embedding = embedder.embed(&context.topic)?;
                let mut members: Vec<(&str, crate::grouping::TextEmbedding)> = Vec::new();
                let member_ids: Vec<String> = store
                    .members(g)
                    .into_iter()
                    .map(|u| catalog.user_id(u).to_string())
                    .collect();
                for member in &member_ids {
                    let profile = profiles.get(member).ok_or_else(|| Error::MissingArtifact {
                        stage: "profile",
                        hint: format!("no profile for member {member:?} of group {group_id:?}"),
                    })?;
                    members.push((member.as_str(), embedder.embed(&profile.keyword_text())?));
                }
                if let Some(leader) = select_leader(&topic_embedding, &members) {
                    context.leader = Some(leader.to_string());
                    leaders.insert(group_id.to_string(), leader.to_string());
                }
                context_store.save(&context)?;
            }
        }

        let doc = LeadersDoc {
            fingerprint: self.fingerprint.clone(),
            enabled: self.config.leadership.enabled,
            leaders,
        };
        write_text(
            &self.out("leaders.json"),
            &(serde_json::to_string_pretty(&doc).unwrap() + "\n"),
        )?;
        log::info!(
            "leaders: {} resolved (enabled = {})",
            doc.leaders.len(),
            doc.enabled
        );
        Ok(())
    }

    // -- recommend ------------------------------------------------------------

    pub fn recommend(&self, client: &LlmClient, strategy: Strategy) -> Result<RecommendOutcome> {
        let (catalog, store) = self.load_dataset()?;
        let split = self.load_split(&catalog, &store)?;
        let profiles = self.load_profiles(&catalog, &store)?;
        let contexts = self.load_contexts(&catalog)?;
        let leaders: LeadersDoc = read_json(&self.out("leaders.json"), "leaders")?;
        self.check_fingerprint(&leaders.fingerprint, "leaders.json")?;

        let outcome = recommend_all(
            client,
            &catalog,
            &split,
            &profiles,
            &contexts,
            strategy,
            self.config.dynamic.max_rounds,
        );

        let telemetry_by_group: BTreeMap<&str, &GroupTelemetry> = outcome
            .telemetry
            .iter()
            .map(|t| (t.group_id.as_str(), t))
            .collect();
        let mut lines = String::new();
        for result in &outcome.results {
            let t = telemetry_by_group
                .get(result.group_id.as_str())
                .expect("telemetry recorded per group");
            let record = ResultRecord {
                group_id: result.group_id.clone(),
                strategy: result.strategy,
                ranked_items: result.ranked_items.clone(),
                rounds_used: result.rounds_used,
                consensus: result.consensus,
                telemetry: RecordTelemetry {
                    backend_calls: t.backend_calls,
                    cache_hits: t.cache_hits,
                    tokens: t.tokens,
                },
                fingerprint: self.fingerprint.clone(),
            };
            lines.push_str(&serde_json::to_string(&record).unwrap());
            lines.push('\n');
        }
        write_text(
            &self.out(&format!("results_{}.jsonl", strategy.as_str())),
            &lines,
        )?;

        if strategy == Strategy::Dynamic {
            let dir = self.out("transcripts");
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for transcript in &outcome.transcripts {
                let path = dir.join(format!(
                    "{}.json",
                    crate::profiling::safe_filename(&transcript.group_id)
                ));
                write_text(
                    &path,
                    &(serde_json::to_string_pretty(transcript).unwrap() + "\n"),
                )?;
            }
        }

        let summary = TelemetrySummary {
            fingerprint: &self.fingerprint,
            strategy: strategy.as_str(),
            total_backend_calls: outcome.total_backend_calls(),
            total_cache_hits: outcome.telemetry.iter().map(|t| t.cache_hits).sum(),
            total_tokens: outcome.total_tokens(),
            total_wall_ms: outcome.telemetry.iter().map(|t| t.wall_ms).sum(),
            per_group: &outcome.telemetry,
            failures: &outcome.failures,
        };
        write_text(
            &self.out(&format!("telemetry_{}.json", strategy.as_str())),
            &(serde_json::to_string_pretty(&summary).unwrap() + "\n"),
        )?;
        log::info!(
            "recommend [{}]: {} results, {} failures, {} backend calls, {} tokens",
            strategy.as_str(),
            outcome.results.len(),
            outcome.failures.len(),
            summary.total_backend_calls,
            summary.total_tokens
        );
        Ok(outcome)
    }

    // -- evaluate ---------------------------------------------------------------

    fn read_results(&self, path: &Path, force: bool) -> Result<Vec<GroupRecommendation>> {
        if !path.exists() {
            return Err(Error::MissingArtifact {
                stage: "recommend",
                hint: format!("{} not found; run recommend first", path.display()),
            });
        }
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut results = Vec::new();
        let mut fingerprints: Vec<String> = Vec::new();
        for (i, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: ResultRecord =
                serde_json::from_str(line).map_err(|e| Error::Malformed {
                    file: path.to_path_buf(),
                    line: i + 1,
                    msg: format!("bad result record: {e}"),
                })?;
            fingerprints.push(record.fingerprint.clone());
            results.push(GroupRecommendation {
                group_id: record.group_id,
                strategy: record.strategy,
                ranked_items: record.ranked_items,
                rounds_used: record.rounds_used,
                consensus: record.consensus,
            });
        }
        fingerprints.dedup();
        if !force {
            if fingerprints.len() > 1 {
                return Err(Error::FingerprintMismatch(format!(
                    "{} mixes fingerprints {:?}; pass --force to evaluate anyway",
                    path.display(),
                    fingerprints
                )));
            }
            if let Some(fp) = fingerprints.first() {
                self.check_fingerprint(fp, &path.display().to_string())?;
            }
        }
        Ok(results)
    }

    /// Evaluate one or more results files against the split manifest; returns
    /// the reports and the rendered comparison table.
    pub fn evaluate_results(
        &self,
        results_paths: &[PathBuf],
        force: bool,
    ) -> Result<(Vec<MetricReport>, String)> {
        let manifest: SplitManifest = read_json(&self.out("split.json"), "ingest")?;
        if !force {
            self.check_fingerprint(&manifest.fingerprint, "split.json")?;
        }
        let positives: BTreeMap<String, String> = manifest
            .test_cases
            .iter()
            .map(|c| (c.group.clone(), c.positive.clone()))
            .collect();
        let mut reports = Vec::new();
        for path in results_paths {
            let results = self.read_results(path, force)?;
            let n_errors = manifest.test_cases.len().saturating_sub(results.len());
            reports.push(evaluate(
                &results,
                &positives,
                &self.config.eval.k_values,
                n_errors,
                &self.fingerprint,
            )?);
        }
        let table = render_table(&reports.iter().collect::<Vec<_>>());
        write_text(
            &self.out("report.json"),
            &(serde_json::to_string_pretty(&reports).unwrap() + "\n"),
        )?;
        write_text(&self.out("report.txt"), &table)?;
        Ok((reports, table))
    }
}
