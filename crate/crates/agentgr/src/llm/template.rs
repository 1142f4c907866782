//! Prompt templates and budget-aware rendering.
//!
//! Templates ship with the artifact and are versioned; the template name and
//! version participate in the completion cache key. Placeholders use
//! `{{name}}` and bind either a text variable or a list variable (rendered
//! one item per line). When a rendered prompt exceeds the token budget, items
//! are dropped from the tail of the largest list variable — callers pass
//! lists most-relevant-first — and never cut mid-item.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Variables bound into a template before rendering.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PromptVars {
    text: BTreeMap<String, String>,
    lists: BTreeMap<String, Vec<String>>,
}

impl PromptVars {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn text(mut self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.text.insert(name.into(), value.into());
        self
    }

    pub fn list(mut self, name: impl Into<String>, items: Vec<String>) -> Self {
        self.lists.insert(name.into(), items);
        self
    }

    pub fn get_text(&self, name: &str) -> Option<&str> {
        self.text.get(name).map(String::as_str)
    }

    pub fn get_list(&self, name: &str) -> Option<&[String]> {
        self.lists.get(name).map(Vec::as_slice)
    }

    fn resolve(&self, name: &str) -> Option<String> {
        if let Some(t) = self.text.get(name) {
            return Some(t.clone());
        }
        self.lists.get(name).map(|items| items.join("\n"))
    }

    /// Deterministic flat rendering of every variable, used by the mock
    /// backend to derive reply hashes.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.text {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\u{1f}');
        }
        for (k, items) in &self.lists {
            out.push_str(k);
            out.push('=');
            for item in items {
                out.push_str(item);
                out.push('\u{1e}');
            }
            out.push('\u{1f}');
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Template {
    pub name: &'static str,
    pub version: &'static str,
    pub body: &'static str,
}

/// Rough token estimate: four characters per token.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

fn render(template: &Template, vars: &PromptVars) -> Result<String> {
    let mut out = String::with_capacity(template.body.len());
    let mut rest = template.body;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after.find("}}").ok_or_else(|| {
            Error::Config(format!(
                "template {:?}: unclosed placeholder",
                template.name
            ))
        })?;
        let name = &after[..end];
        match vars.resolve(name) {
            Some(value) => out.push_str(&value),
            None => {
                return Err(Error::Config(format!(
                    "template {:?}: variable {name:?} unbound",
                    template.name
                )))
            }
        }
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Render within the token budget, trimming list variables from the tail.
///
/// Returns the rendered prompt and the (possibly trimmed) variables it was
/// rendered from, so that downstream consumers see exactly what the prompt
/// contains.
pub fn render_with_budget(
    template: &Template,
    vars: &PromptVars,
    budget: usize,
) -> Result<(String, PromptVars)> {
    let mut work = vars.clone();
    loop {
        let rendered = render(template, &work)?;
        if estimate_tokens(&rendered) <= budget {
            return Ok((rendered, work));
        }
        // Drop one item from the longest list; ties resolve by name order.
        let victim = work
            .lists
            .iter()
            .filter(|(_, items)| !items.is_empty())
            .max_by_key(|(name, items)| (items.len(), std::cmp::Reverse(name.as_str())))
            .map(|(name, _)| name.clone());
        match victim {
            Some(name) => {
                work.lists.get_mut(&name).unwrap().pop();
            }
            None => {
                return Err(Error::PromptBudget {
                    template: template.name.to_string(),
                    budget,
                })
            }
        }
    }
}

/// Template names used across the pipeline.
pub mod names {
    pub const MEMBER_ALIGNMENT: &str = "member_alignment";
    pub const VIEW_PREFERENCE: &str = "view_preference";
    pub const INTEGRATE_PREFERENCES: &str = "integrate_preferences";
    pub const EXTRACT_KEYWORDS: &str = "extract_keywords";
    pub const INTRA_TOPIC: &str = "intra_topic";
    pub const INTER_TOPIC: &str = "inter_topic";
    pub const FUSE_TOPIC: &str = "fuse_topic";
    pub const MEMBER_RANK: &str = "member_rank";
    pub const GROUP_RERANK: &str = "group_rerank";
    pub const DISCUSSION_UTTERANCE: &str = "discussion_utterance";
    pub const DISCUSSION_SUMMARY: &str = "discussion_summary";
    pub const CONSENSUS_JUDGE: &str = "consensus_judge";
}

const TEMPLATES: &[Template] = &[
    Template {
        name: names::MEMBER_ALIGNMENT,
        version: "v1",
        body: "You are assessing how closely one member's tastes align with their group's shared interests.\n\nItems the group has engaged with:\n{{group_items}}\n\nItems this member has engaged with:\n{{member_items}}\n\nRate the alignment between the member's tastes and the group's interests.\nRespond with exactly one word: high, medium, or low.",
    },
    Template {
        name: names::VIEW_PREFERENCE,
        version: "v1",
        body: "You are profiling a user's tastes from {{view_label}}.\n\nInteraction evidence, strongest first:\n{{evidence}}\n\nDescribe the user's preferences in two to three sentences. Stay concrete and do not invent details beyond the evidence.",
    },
    Template {
        name: names::INTEGRATE_PREFERENCES,
        version: "v1",
        body: "Merge two views of the same user's preferences into one profile.\n\nUser view, drawn from the user's own interactions (primary evidence):\n{{user_view}}\n\nGroup view, drawn from groups the user belongs to (auxiliary evidence):\n{{group_view}}\n\nWrite a unified preference profile in two to four sentences. Weight the user view more heavily; use the group view only to refine or corroborate it.",
    },
    Template {
        name: names::EXTRACT_KEYWORDS,
        version: "v1",
        body: "Distill the preference profile below into at most {{cap}} keywords.\n\nProfile:\n{{preferences}}\n\nOutput one keyword per line, formatted exactly as:\nkeyword: one-line justification\nNo other text.",
    },
    Template {
        name: names::INTRA_TOPIC,
        version: "v1",
        body: "Items this group has engaged with:\n{{items}}\n\nSummarize the group's shared interest topic in one to two sentences.",
    },
    Template {
        name: names::INTER_TOPIC,
        version: "v1",
        body: "Interest topics of groups similar to this one, most similar first:\n{{neighbor_topics}}\n\nAbstract the common themes these groups share in one to two sentences.",
    },
    Template {
        name: names::FUSE_TOPIC,
        version: "v1",
        body: "Own-activity topic of a group:\n{{intra}}\n\nTopic of related groups:\n{{inter}}\n\nFuse the two into a single topic description in one to two sentences. The own-activity topic is the primary signal; use the related-group topic only to enrich it.",
    },
    Template {
        name: names::MEMBER_RANK,
        version: "v1",
        body: "You are role-playing a user deciding what their group should do next.\n\nYour preference profile:\n{{profile}}\n{{topic_line}}\nCandidate items:\n{{candidates}}\n\nRank ALL candidate items from most to least preferred for you personally, keeping the group's topic in mind. Output only the item ids, comma-separated, best first.",
    },
    Template {
        name: names::GROUP_RERANK,
        version: "v1",
        body: "You are the group decision agent producing the final ranking for a group.\n{{topic_line}}\nEach member's individual ranking, best first:\n{{member_rankings}}\n{{leader_line}}\nCandidate items:\n{{candidates}}\n\nRe-rank ALL candidate items into the group's final order, balancing the members' stated preferences. Output only the item ids, comma-separated, best first.",
    },
    Template {
        name: names::DISCUSSION_UTTERANCE,
        version: "v1",
        body: "You are role-playing user {{user_id}} in a group discussion about what to do next together.\n\nYour preference profile:\n{{profile}}\n{{topic_line}}{{leader_line}}\nCandidate items:\n{{candidates}}\n\nDiscussion so far, most recent first:\n{{transcript}}\n\nState which candidate items you favor and why, in one to three sentences. Mention item ids explicitly. You may compromise toward views already voiced.",
    },
    Template {
        name: names::DISCUSSION_SUMMARY,
        version: "v1",
        body: "You are the group decision agent summarizing a discussion into a ranking.\n{{topic_line}}\nCandidate items:\n{{candidates}}\n\nFull discussion transcript, most recent first:\n{{transcript}}\n\nSummarize the group's collective preference as a ranking of ALL candidate items. Output only the item ids, comma-separated, best first.",
    },
    Template {
        name: names::CONSENSUS_JUDGE,
        version: "v1",
        body: "You are an external judge deciding whether a group discussion has reached consensus.\n\nRound number: {{round}}\n\nUtterances from the latest round:\n{{round_transcript}}\n\nProposed group ranking:\n{{ranking}}\n\nHas the group reached consensus on this ranking? Reply with exactly CONSENSUS: YES or CONSENSUS: NO.",
    },
];

/// Registry of the templates shipped with the artifact.
#[derive(Debug, Clone)]
pub struct TemplateRegistry {
    map: BTreeMap<&'static str, Template>,
}

impl TemplateRegistry {
    pub fn builtin() -> Self {
        let map = TEMPLATES.iter().map(|t| (t.name, *t)).collect();
        Self { map }
    }

    pub fn get(&self, name: &str) -> Result<&Template> {
        self.map
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown prompt template {name:?}")))
    }
}

impl Default for TemplateRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}
