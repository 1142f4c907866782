//! Parsers for structured backend replies.
//!
//! These are total where the surrounding protocol needs totality
//! (`parse_ranked_list` always yields a full permutation) and conservative
//! where ambiguity is dangerous (`parse_consensus` defaults to no consensus).

use std::collections::{HashMap, HashSet};

/// Three-level alignment rating between a member and their group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AlignmentLevel {
    High,
    Medium,
    Low,
}

impl AlignmentLevel {
    pub fn as_str(&self) -> &'static str {
        match self {
            AlignmentLevel::High => "high",
            AlignmentLevel::Medium => "medium",
            AlignmentLevel::Low => "low",
        }
    }
}

/// Judge verdict for a discussion round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Consensus,
    NoConsensus,
}

fn id_tokens(text: &str) -> impl Iterator<Item = &str> {
    text.split(|ch: char| !(ch.is_alphanumeric() || ch == '_' || ch == '-' || ch == '.'))
        .map(|tok| tok.trim_matches(|ch| ch == '.' || ch == '-'))
        .filter(|tok| !tok.is_empty())
}

/// Extract a ranking over `universe` from free-form text.
///
/// Ids are recognized as whole tokens in first-mention order; ids outside the
/// universe are dropped, repeats keep their first occurrence, and any universe
/// ids the text never mentions are appended in ascending id order. The result
/// is always a permutation of `universe`.
pub fn parse_ranked_list(text: &str, universe: &[String]) -> Vec<String> {
    let exact: HashMap<&str, usize> = universe
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    // fall back to case-insensitive matching only where it is unambiguous
    let mut lower: HashMap<String, usize> = HashMap::new();
    let mut ambiguous: HashSet<String> = HashSet::new();
    for (i, id) in universe.iter().enumerate() {
        let l = id.to_lowercase();
        if lower.insert(l.clone(), i).is_some() {
            ambiguous.insert(l);
        }
    }

    let mut seen: HashSet<usize> = HashSet::new();
    let mut ranked: Vec<usize> = Vec::new();
    for tok in id_tokens(text) {
        let idx = exact.get(tok).copied().or_else(|| {
            let l = tok.to_lowercase();
            if ambiguous.contains(&l) {
                None
            } else {
                lower.get(&l).copied()
            }
        });
        if let Some(i) = idx {
            if seen.insert(i) {
                ranked.push(i);
            }
        }
    }

    let mut missing: Vec<usize> = (0..universe.len()).filter(|i| !seen.contains(i)).collect();
    missing.sort_by(|&a, &b| universe[a].cmp(&universe[b]));
    ranked.extend(missing);
    ranked.into_iter().map(|i| universe[i].clone()).collect()
}

/// Parse a member-alignment rating; tolerant of case and punctuation.
///
/// The first alphabetic word equal to `high`, `medium` or `low` wins.
pub fn parse_rating(text: &str) -> Option<AlignmentLevel> {
    for word in text.split(|ch: char| !ch.is_alphabetic()) {
        match word.to_lowercase().as_str() {
            "high" => return Some(AlignmentLevel::High),
            "medium" => return Some(AlignmentLevel::Medium),
            "low" => return Some(AlignmentLevel::Low),
            _ => {}
        }
    }
    None
}

const NEGATIVE_MARKERS: &[&str] = &[
    "consensus: no",
    "consensus:no",
    "no consensus",
    "not reached",
    "not been reached",
    "not agreed",
    "no agreement",
    "disagree",
    "consensus: false",
];

const AFFIRMATIVE_MARKERS: &[&str] = &[
    "consensus: yes",
    "consensus:yes",
    "consensus reached",
    "consensus achieved",
    "consensus has been reached",
    "consensus was reached",
    "agreement reached",
    "consensus: true",
    "all members agree",
    "the group agrees",
];

/// Decide whether a judge reply declares consensus.
///
/// Grammar: the normalized text (lowercased, whitespace collapsed) is scanned
/// for negative markers first, then affirmative markers; anything ambiguous
/// or unrecognized is conservatively treated as no consensus.
pub fn parse_consensus(text: &str) -> Verdict {
    let normalized = text
        .to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ");
    if NEGATIVE_MARKERS.iter().any(|m| normalized.contains(m)) {
        return Verdict::NoConsensus;
    }
    if AFFIRMATIVE_MARKERS.iter().any(|m| normalized.contains(m)) {
        return Verdict::Consensus;
    }
    Verdict::NoConsensus
}

/// Parse `keyword: justification` lines, at most `cap` of them.
///
/// Leading list markers (`1.`, `-`, `*`) are tolerated. Returns `None` when
/// no line matches the grammar.
pub fn parse_keyword_lines(text: &str, cap: usize) -> Option<Vec<(String, String)>> {
    let mut out = Vec::new();
    for line in text.lines() {
        if out.len() >= cap {
            break;
        }
        let mut line = line.trim();
        loop {
            let stripped = line
                .trim_start_matches(|ch: char| ch.is_ascii_digit())
                .trim_start_matches(['.', ')', '-', '*'])
                .trim_start();
            if stripped == line {
                break;
            }
            line = stripped;
        }
        if let Some((k, j)) = line.split_once(':') {
            let k = k.trim();
            let j = j.trim();
            if !k.is_empty() && !j.is_empty() {
                out.push((k.to_string(), j.to_string()));
            }
        }
    }
    if out.is_empty() {
        None
    } else {
        Some(out)
    }
}
