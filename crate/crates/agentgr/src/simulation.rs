//! Multi-agent group decision simulation.
//!
//! Two strategies over the same per-group inputs: the static workflow has
//! every member agent rank the candidates and a group agent re-rank once; the
//! dynamic protocol runs discussion rounds (leader speaks first), a summarizer
//! agent folds each round into a ranking, and a separate judge agent decides
//! whether to stop. A third, backend-free heuristic ranker exists for
//! ablations. Whatever the backend replies, results are completed into full
//! permutations of the candidate set.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{Catalog, EvaluationSplit};
use crate::error::{Error, Result};
use crate::grouping::{GroupContext, NO_TOPIC};
use crate::llm::template::names;
use crate::llm::{parse_consensus, parse_ranked_list, LlmClient, PromptRequest, Verdict};
use crate::profiling::UserProfile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Static,
    Dynamic,
    Heuristic,
}

impl Strategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Static => "static",
            Strategy::Dynamic => "dynamic",
            Strategy::Heuristic => "heuristic",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(Strategy::Static),
            "dynamic" => Ok(Strategy::Dynamic),
            "heuristic" => Ok(Strategy::Heuristic),
            other => Err(Error::Config(format!(
                "unknown strategy {other:?} (expected static, dynamic or heuristic)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemberRanking {
    pub user: String,
    pub ranked_items: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupRecommendation {
    pub group_id: String,
    pub strategy: Strategy,
    pub ranked_items: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rounds_used: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub consensus: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub user: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscussionRound {
    pub utterances: Vec<Utterance>,
    pub summary_ranking: Vec<String>,
    pub consensus: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscussionTranscript {
    pub group_id: String,
    pub rounds: Vec<DiscussionRound>,
}

/// Everything one group's simulation needs, resolved to plain data.
#[derive(Debug, Clone)]
pub struct GroupScenario {
    pub group_id: String,
    /// member user ids, ascending
    pub members: Vec<String>,
    pub profiles: BTreeMap<String, UserProfile>,
    /// group topic; None when unavailable or disabled
    pub topic: Option<String>,
    /// leader user id; None when leadership is disabled
    pub leader: Option<String>,
    /// (item id, description) in candidate order
    pub candidates: Vec<(String, String)>,
}

impl GroupScenario {
    fn candidate_ids(&self) -> Vec<String> {
        self.candidates.iter().map(|(id, _)| id.clone()).collect()
    }

    fn candidate_lines(&self) -> Vec<String> {
        self.candidates
            .iter()
            .map(|(id, desc)| format!("{id}: {desc}"))
            .collect()
    }

    fn topic_line(&self) -> String {
        match &self.topic {
            Some(topic) => format!("The group's shared topic: {topic}\n"),
            None => String::new(),
        }
    }

    fn profile_text(&self, user: &str) -> Result<String> {
        let profile = self.profiles.get(user).ok_or_else(|| {
            Error::Data(format!(
                "no profile for member {user:?} of group {:?}",
                self.group_id
            ))
        })?;
        Ok(profile.keyword_lines().join("; "))
    }

    /// Leader first, then the remaining members in ascending id order.
    fn speaking_order(&self) -> Vec<String> {
        let mut order = Vec::with_capacity(self.members.len());
        if let Some(leader) = &self.leader {
            if self.members.contains(leader) {
                order.push(leader.clone());
            }
        }
        for member in &self.members {
            if order.first() != Some(member) {
                order.push(member.clone());
            }
        }
        order
    }
}

/// One member agent ranks the candidates (static stage one).
pub fn static_rank_member(
    client: &LlmClient,
    scenario: &GroupScenario,
    user: &str,
) -> Result<MemberRanking> {
    let req = PromptRequest::new(names::MEMBER_RANK)
        .text("profile", scenario.profile_text(user)?)
        .text("topic_line", scenario.topic_line())
        .list("candidates", scenario.candidate_lines());
    let reply = client.complete(&req)?;
    let universe = scenario.candidate_ids();
    Ok(MemberRanking {
        user: user.to_string(),
        ranked_items: parse_ranked_list(&reply.text, &universe),
    })
}

/// The group agent re-ranks from all member rankings (static stage two); the
/// leader's ranking is marked for extra weight when leadership is on.
pub fn static_rerank(
    client: &LlmClient,
    scenario: &GroupScenario,
    member_rankings: &[MemberRanking],
) -> Result<Vec<String>> {
    let ranking_lines: Vec<String> = member_rankings
        .iter()
        .map(|r| {
            let marker = if scenario.leader.as_deref() == Some(r.user.as_str()) {
                " (leader)"
            } else {
                ""
            };
            format!("{}{marker}: {}", r.user, r.ranked_items.join(", "))
        })
        .collect();
    let leader_line = match &scenario.leader {
        Some(leader) => {
            format!(
                "Member {leader} is the group leader; give their stated preferences extra weight."
            )
        }
        None => String::new(),
    };
    let req = PromptRequest::new(names::GROUP_RERANK)
        .text("topic_line", scenario.topic_line())
        .text("leader_line", leader_line)
        .list("member_rankings", ranking_lines)
        .list("candidates", scenario.candidate_lines());
    let reply = client.complete(&req)?;
    let universe = scenario.candidate_ids();
    Ok(parse_ranked_list(&reply.text, &universe))
}

/// Static workflow: one ranking call per member plus one re-rank call.
pub fn run_static(client: &LlmClient, scenario: &GroupScenario) -> Result<GroupRecommendation> {
    let mut member_rankings = Vec::with_capacity(scenario.members.len());
    for user in &scenario.members {
        member_rankings.push(static_rank_member(client, scenario, user)?);
    }
    let ranked_items = static_rerank(client, scenario, &member_rankings)?;
    Ok(GroupRecommendation {
        group_id: scenario.group_id.clone(),
        strategy: Strategy::Static,
        ranked_items,
        rounds_used: None,
        consensus: None,
    })
}

fn leader_cue(scenario: &GroupScenario, speaker: &str) -> String {
    match &scenario.leader {
        Some(leader) if leader == speaker => {
            "You are the group leader; set a clear direction.\n".to_string()
        }
        Some(leader) => {
            format!("Member {leader} is the group leader; weigh their direction.\n")
        }
        None => String::new(),
    }
}

/// Dynamic protocol: discussion rounds until the judge sees consensus or
/// `max_rounds` is reached; the last summary ranking is the result.
pub fn run_dynamic(
    client: &LlmClient,
    scenario: &GroupScenario,
    max_rounds: u32,
) -> Result<(GroupRecommendation, DiscussionTranscript)> {
    assert!(max_rounds >= 1, "max_rounds must be >= 1");
    let universe = scenario.candidate_ids();
    let order = scenario.speaking_order();
    // newest-first so budget truncation drops the oldest turns
    let mut transcript_lines: Vec<String> = Vec::new();
    let mut rounds: Vec<DiscussionRound> = Vec::new();

    let with_round = |e: Error, round: u32| {
        log::error!(
            "dynamic round {round} failed for group {:?}: {e}",
            scenario.group_id
        );
        e
    };

    for round in 1..=max_rounds {
        let mut utterances = Vec::with_capacity(order.len());
        for speaker in &order {
            let req = PromptRequest::new(names::DISCUSSION_UTTERANCE)
                .text("user_id", speaker.clone())
                .text("profile", scenario.profile_text(speaker)?)
                .text("topic_line", scenario.topic_line())
                .text("leader_line", leader_cue(scenario, speaker))
                .list("candidates", scenario.candidate_lines())
                .list("transcript", transcript_lines.clone());
            let reply = client.complete(&req).map_err(|e| with_round(e, round))?;
            transcript_lines.insert(0, format!("{speaker}: {}", reply.text));
            utterances.push(Utterance {
                user: speaker.clone(),
                text: reply.text,
            });
        }

        let summary_req = PromptRequest::new(names::DISCUSSION_SUMMARY)
            .text("topic_line", scenario.topic_line())
            .list("candidates", scenario.candidate_lines())
            .list("transcript", transcript_lines.clone());
        let summary = client
            .complete(&summary_req)
            .map_err(|e| with_round(e, round))?;
        let summary_ranking = parse_ranked_list(&summary.text, &universe);

        let round_lines: Vec<String> = utterances
            .iter()
            .map(|u| format!("{}: {}", u.user, u.text))
            .collect();
        let judge_req = PromptRequest::new(names::CONSENSUS_JUDGE)
            .text("round", round.to_string())
            .text("ranking", summary_ranking.join(", "))
            .list("round_transcript", round_lines);
        let verdict = client
            .complete(&judge_req)
            .map_err(|e| with_round(e, round))?;
        let consensus = parse_consensus(&verdict.text) == Verdict::Consensus;

        rounds.push(DiscussionRound {
            utterances,
            summary_ranking,
            consensus,
        });
        if consensus {
            break;
        }
    }

    let last = rounds.last().expect("max_rounds >= 1 implies a round");
    let recommendation = GroupRecommendation {
        group_id: scenario.group_id.clone(),
        strategy: Strategy::Dynamic,
        ranked_items: last.summary_ranking.clone(),
        rounds_used: Some(rounds.len() as u32),
        consensus: Some(last.consensus),
    };
    let transcript = DiscussionTranscript {
        group_id: scenario.group_id.clone(),
        rounds,
    };
    Ok((recommendation, transcript))
}

fn tokens_of(text: &str) -> std::collections::HashSet<String> {
    text.to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || c == '_' || c == '-'))
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Profile-only ranker: no backend calls. Scores each candidate by keyword
/// token overlap with the members' profiles; ties break by ascending id.
pub fn run_heuristic(scenario: &GroupScenario) -> GroupRecommendation {
    let member_tokens: Vec<std::collections::HashSet<String>> = scenario
        .members
        .iter()
        .filter_map(|u| scenario.profiles.get(u))
        .map(|p| tokens_of(&p.keyword_text()))
        .collect();
    let mut scored: Vec<(usize, &(String, String))> = scenario
        .candidates
        .iter()
        .map(|cand| {
            let item_tokens = tokens_of(&format!("{} {}", cand.0, cand.1));
            let score: usize = member_tokens
                .iter()
                .map(|kw| kw.intersection(&item_tokens).count())
                .sum();
            (score, cand)
        })
        .collect();
    scored.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1 .0.cmp(&b.1 .0)));
    GroupRecommendation {
        group_id: scenario.group_id.clone(),
        strategy: Strategy::Heuristic,
        ranked_items: scored.into_iter().map(|(_, c)| c.0.clone()).collect(),
        rounds_used: None,
        consensus: None,
    }
}

// ---------------------------------------------------------------------------
// Batch driver

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupFailure {
    pub group_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupTelemetry {
    pub group_id: String,
    pub backend_calls: u64,
    pub cache_hits: u64,
    pub tokens: u64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RecommendOutcome {
    pub results: Vec<GroupRecommendation>,
    pub failures: Vec<GroupFailure>,
    pub transcripts: Vec<DiscussionTranscript>,
    pub telemetry: Vec<GroupTelemetry>,
}

impl RecommendOutcome {
    pub fn total_backend_calls(&self) -> u64 {
        self.telemetry.iter().map(|t| t.backend_calls).sum()
    }

    pub fn total_tokens(&self) -> u64 {
        self.telemetry.iter().map(|t| t.tokens).sum()
    }
}

const CANDIDATE_DESC_CLIP: usize = 100;

/// Build the scenario for one test case from pipeline artifacts.
pub fn build_scenario(
    catalog: &Catalog,
    split: &EvaluationSplit,
    case_index: usize,
    profiles: &BTreeMap<String, UserProfile>,
    contexts: &BTreeMap<String, GroupContext>,
) -> Result<GroupScenario> {
    let case = &split.test_cases[case_index];
    let group_id = catalog.group_id(case.group).to_string();
    let members: Vec<String> = split
        .train
        .members(case.group)
        .into_iter()
        .map(|u| catalog.user_id(u).to_string())
        .collect();
    let mut scenario_profiles = BTreeMap::new();
    for member in &members {
        let profile = profiles.get(member).ok_or_else(|| Error::MissingArtifact {
            stage: "profile",
            hint: format!("no profile for member {member:?} of group {group_id:?}"),
        })?;
        scenario_profiles.insert(member.clone(), profile.clone());
    }
    let context = contexts
        .get(&group_id)
        .ok_or_else(|| Error::MissingArtifact {
            stage: "topics",
            hint: format!("no group context for {group_id:?}"),
        })?;
    let topic = if context.topic == NO_TOPIC {
        None
    } else {
        Some(context.topic.clone())
    };
    let candidates: Vec<(String, String)> = case
        .candidates
        .iter()
        .map(|&i| {
            let desc: String = catalog
                .item_description(i)
                .chars()
                .take(CANDIDATE_DESC_CLIP)
                .collect();
            (catalog.item_id(i).to_string(), desc)
        })
        .collect();
    Ok(GroupScenario {
        group_id,
        members,
        profiles: scenario_profiles,
        topic,
        leader: context.leader.clone(),
        candidates,
    })
}

/// Run one strategy over every test case. Per-group failures are recorded
/// without aborting the batch; groups run sequentially so per-group telemetry
/// deltas are exact.
pub fn recommend_all(
    client: &LlmClient,
    catalog: &Catalog,
    split: &EvaluationSplit,
    profiles: &BTreeMap<String, UserProfile>,
    contexts: &BTreeMap<String, GroupContext>,
    strategy: Strategy,
    max_rounds: u32,
) -> RecommendOutcome {
    let mut outcome = RecommendOutcome {
        results: Vec::new(),
        failures: Vec::new(),
        transcripts: Vec::new(),
        telemetry: Vec::new(),
    };
    for case_index in 0..split.test_cases.len() {
        let group_id = catalog
            .group_id(split.test_cases[case_index].group)
            .to_string();
        let before = client.telemetry();
        let started = Instant::now();
        let run =
            build_scenario(catalog, split, case_index, profiles, contexts).and_then(|scenario| {
                match strategy {
                    Strategy::Static => run_static(client, &scenario).map(|r| (r, None)),
                    Strategy::Dynamic => {
                        run_dynamic(client, &scenario, max_rounds).map(|(r, t)| (r, Some(t)))
                    }
                    Strategy::Heuristic => Ok((run_heuristic(&scenario), None)),
                }
            });
        let delta = client.telemetry().delta_since(&before);
        outcome.telemetry.push(GroupTelemetry {
            group_id: group_id.clone(),
            backend_calls: delta.backend_calls,
            cache_hits: delta.cache_hits,
            tokens: delta.tokens,
            wall_ms: started.elapsed().as_millis() as u64,
        });
        match run {
            Ok((result, transcript)) => {
                outcome.results.push(result);
                if let Some(t) = transcript {
                    outcome.transcripts.push(t);
                }
            }
            Err(e) => {
                log::error!("group {group_id:?} failed: {e}");
                outcome.failures.push(GroupFailure {
                    group_id,
                    error: e.to_string(),
                });
            }
        }
    }
    outcome
}
