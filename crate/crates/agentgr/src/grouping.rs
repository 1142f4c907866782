//! Group topic recognition and leader selection.
//!
//! A group's topic is fused from its own interacted items (intra) and the
//! topics of groups with overlapping interactions (inter). The leader is the
//! member whose keyword profile embeds closest to the topic embedding under
//! cosine similarity.

use std::fs;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashutil::stable_hash;
use crate::llm::template::names;
use crate::llm::{LlmClient, PromptRequest};
use crate::profiling::safe_filename;
use crate::sparse::SparseMatrix;

/// Sentinel for groups (or neighbor sets) without observable activity.
pub const NO_TOPIC: &str = "no observable topic";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupContext {
    pub group_id: String,
    pub intra_topic: String,
    pub inter_topic: String,
    pub topic: String,
    pub neighbors: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub leader: Option<String>,
    pub fingerprint: String,
}

/// Summarize a group's own interacted items into a topic text.
///
/// `items` are `id: description` lines pre-sorted by item id, so permuted
/// input files produce identical prompts. Empty input short-circuits to the
/// sentinel.
pub fn intra_topic(client: &LlmClient, items: &[String]) -> Result<String> {
    if items.is_empty() {
        return Ok(NO_TOPIC.to_string());
    }
    let req = PromptRequest::new(names::INTRA_TOPIC).list("items", items.to_vec());
    Ok(client.complete(&req)?.text)
}

/// Groups sharing at least one interacted item with `group`, ranked by
/// Jaccard similarity of their item sets (descending, ties by ascending group
/// index = ascending group id), truncated to `top_k`.
pub fn neighbor_groups(group: usize, y: &SparseMatrix, top_k: usize) -> Vec<usize> {
    let own: Vec<usize> = y.row(group).map(|(i, _)| i).collect();
    if own.is_empty() {
        return Vec::new();
    }
    let own_set: std::collections::HashSet<usize> = own.iter().copied().collect();
    let mut scored: Vec<(usize, usize, usize)> = Vec::new(); // (group, inter, union)
    for other in 0..y.rows() {
        if other == group {
            continue;
        }
        let other_items: Vec<usize> = y.row(other).map(|(i, _)| i).collect();
        let inter = other_items.iter().filter(|i| own_set.contains(i)).count();
        if inter == 0 {
            continue;
        }
        let union = own.len() + other_items.len() - inter;
        scored.push((other, inter, union));
    }
    // exact rational comparison: a/b > c/d  <=>  a*d > c*b
    scored.sort_by(|&(ga, ia, ua), &(gb, ib, ub)| {
        (ib * ua).cmp(&(ia * ub)).then_with(|| ga.cmp(&gb))
    });
    scored.truncate(top_k);
    scored.into_iter().map(|(g, _, _)| g).collect()
}

/// Abstract a common topic over the neighbors' intra topics, passed in
/// neighbor-rank order. No neighbors short-circuits to the sentinel.
pub fn inter_topic(client: &LlmClient, neighbor_topics: &[String]) -> Result<String> {
    let usable: Vec<String> = neighbor_topics
        .iter()
        .filter(|t| t.as_str() != NO_TOPIC)
        .cloned()
        .collect();
    if usable.is_empty() {
        return Ok(NO_TOPIC.to_string());
    }
    let req = PromptRequest::new(names::INTER_TOPIC).list("neighbor_topics", usable);
    Ok(client.complete(&req)?.text)
}

/// Fuse intra and inter topics, intra dominant. A sentinel on either side
/// returns the other verbatim.
pub fn fuse_topic(client: &LlmClient, intra: &str, inter: &str) -> Result<String> {
    match (intra == NO_TOPIC, inter == NO_TOPIC) {
        (true, true) => Ok(NO_TOPIC.to_string()),
        (false, true) => Ok(intra.to_string()),
        (true, false) => Ok(inter.to_string()),
        (false, false) => {
            let req = PromptRequest::new(names::FUSE_TOPIC)
                .text("intra", intra)
                .text("inter", inter);
            Ok(client.complete(&req)?.text)
        }
    }
}

// ---------------------------------------------------------------------------
// Embeddings

/// Unit-L2-norm embedding vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbedding(Vec<f32>);

impl TextEmbedding {
    /// Normalize a raw vector. All-zero input is rejected.
    pub fn from_raw(raw: Vec<f32>) -> Result<Self> {
        let norm = raw
            .iter()
            .map(|&x| f64::from(x) * f64::from(x))
            .sum::<f64>()
            .sqrt();
        if !norm.is_finite() || norm <= 0.0 {
            return Err(Error::Embedder(
                "cannot normalize zero/non-finite vector".into(),
            ));
        }
        Ok(Self(
            raw.iter().map(|&x| (f64::from(x) / norm) as f32).collect(),
        ))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Cosine similarity, f64 accumulation.
pub fn cosine(a: &TextEmbedding, b: &TextEmbedding) -> f64 {
    assert_eq!(a.dim(), b.dim(), "embedding dimension mismatch");
    let dot: f64 =
        a.0.iter()
            .zip(&b.0)
            .map(|(&x, &y)| f64::from(x) * f64::from(y))
            .sum();
    let na: f64 =
        a.0.iter()
            .map(|&x| f64::from(x) * f64::from(x))
            .sum::<f64>()
            .sqrt();
    let nb: f64 =
        b.0.iter()
            .map(|&x| f64::from(x) * f64::from(x))
            .sum::<f64>()
            .sqrt();
    dot / (na * nb)
}

pub trait TextEmbedder: Send + Sync {
    fn id(&self) -> &str;
    fn embed(&self, text: &str) -> Result<TextEmbedding>;
}

/// Seeded feature-hashing bag-of-words embedder. Leader selection only
/// compares relative similarity, so no pretrained encoder is required here.
pub struct HashEmbedder {
    seed: u64,
    dim: usize,
    id: String,
}

impl HashEmbedder {
    pub fn new(seed: u64, dim: usize) -> Self {
        assert!(dim >= 2, "embedding dimension must be >= 2");
        Self {
            seed,
            dim,
            id: format!("hash:{seed}:{dim}"),
        }
    }
}

impl TextEmbedder for HashEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn embed(&self, text: &str) -> Result<TextEmbedding> {
        let mut raw = vec![0f32; self.dim];
        let mut any = false;
        for token in text
            .to_lowercase()
            .split(|c: char| !(c.is_alphanumeric() || c == '_' || c == '-'))
            .filter(|t| !t.is_empty())
        {
            any = true;
            let h = stable_hash(self.seed, &["tok", token]);
            let bucket = (h % self.dim as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            raw[bucket] += sign;
        }
        if !any {
            // contentless text maps to a fixed unit direction
            raw[0] = 1.0;
        }
        if raw.iter().all(|&x| x == 0.0) {
            // tokens may cancel within a bucket; fall back to a marker dim
            raw[self.dim - 1] = 1.0;
        }
        TextEmbedding::from_raw(raw)
    }
}

/// Client for JSON embedding endpoints (`{model, input}` in,
/// `data[0].embedding` out).
pub struct HttpEmbedder {
    id: String,
    endpoint: String,
    model: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpEmbedder {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        api_key: Option<String>,
    ) -> Result<Self> {
        let endpoint = endpoint.into();
        let model = model.into();
        if endpoint.is_empty() {
            return Err(Error::Config(
                "http embedder requires a non-empty endpoint".into(),
            ));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(60))
            .build()
            .map_err(|e| Error::Embedder(format!("http client: {e}")))?;
        Ok(Self {
            id: format!("http-embed:{model}"),
            endpoint,
            model,
            api_key,
            client,
        })
    }
}

impl TextEmbedder for HttpEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn embed(&self, text: &str) -> Result<TextEmbedding> {
        let body = serde_json::json!({ "model": self.model, "input": text });
        let mut http = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            http = http.bearer_auth(key);
        }
        let resp = http
            .send()
            .map_err(|e| Error::Embedder(format!("request failed: {e}")))?;
        if !resp.status().is_success() {
            return Err(Error::Embedder(format!("status {}", resp.status())));
        }
        let payload: serde_json::Value = resp
            .json()
            .map_err(|e| Error::Embedder(format!("bad json reply: {e}")))?;
        let raw: Vec<f32> = payload["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| Error::Embedder("reply missing data[0].embedding".into()))?
            .iter()
            .map(|v| v.as_f64().unwrap_or(0.0) as f32)
            .collect();
        TextEmbedding::from_raw(raw)
    }
}

// ---------------------------------------------------------------------------
// Leader selection

/// Pick the member whose embedding has the highest cosine similarity to the
/// topic embedding; ties break toward the ascending user id. Returns None
/// only for an empty member list.
pub fn select_leader<'a>(
    topic: &TextEmbedding,
    members: &[(&'a str, TextEmbedding)],
) -> Option<&'a str> {
    let mut best: Option<(&str, f64)> = None;
    for (user, embedding) in members {
        let sim = cosine(topic, embedding);
        let better = match best {
            None => true,
            Some((best_user, best_sim)) => sim > best_sim || (sim == best_sim && *user < best_user),
        };
        if better {
            best = Some((user, sim));
        }
    }
    best.map(|(user, _)| user)
}

/// One JSON document per group in a directory.
#[derive(Debug, Clone)]
pub struct ContextStore {
    dir: PathBuf,
}

impl ContextStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self { dir })
    }

    fn path_for(&self, group_id: &str) -> PathBuf {
        self.dir.join(format!("{}.json", safe_filename(group_id)))
    }

    pub fn save(&self, context: &GroupContext) -> Result<()> {
        let path = self.path_for(&context.group_id);
        let body = serde_json::to_string_pretty(context).expect("context serializes");
        fs::write(&path, body + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(&self, group_id: &str) -> Result<Option<GroupContext>> {
        let path = self.path_for(group_id);
        if !path.exists() {
            return Ok(None);
        }
        let raw = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let context = serde_json::from_str(&raw)
            .map_err(|e| Error::Data(format!("corrupt group context {}: {e}", path.display())))?;
        Ok(Some(context))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{LlmSettings, MockBackend};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn mock_client(seed: u64) -> LlmClient {
        LlmClient::new(
            Arc::new(MockBackend::new(seed)),
            None,
            LlmSettings::default(),
        )
    }

    #[test]
    fn intra_topic_sentinel_and_canonical() {
        let client = mock_client(1);
        assert_eq!(intra_topic(&client, &[]).unwrap(), NO_TOPIC);
        let sorted = vec!["i1: a".to_string(), "i2: b".to_string()];
        let t1 = intra_topic(&client, &sorted).unwrap();
        assert!(t1.contains("i1") && t1.contains("i2"));
        let t2 = intra_topic(&client, &sorted).unwrap();
        assert_eq!(t1, t2);
    }

    fn y_from(groups: &[&[usize]]) -> SparseMatrix {
        let pairs: Vec<(usize, usize)> = groups
            .iter()
            .enumerate()
            .flat_map(|(g, items)| items.iter().map(move |&i| (g, i)))
            .collect();
        SparseMatrix::from_binary_pairs(groups.len(), 10, &pairs)
    }

    #[test]
    fn neighbors_none_when_no_overlap() {
        let y = y_from(&[&[0, 1], &[5, 6]]);
        assert!(neighbor_groups(0, &y, 5).is_empty());
    }

    #[test]
    fn neighbors_ranked_by_jaccard() {
        // g0={i0,i1}; g1={i0,i1} J=1; g2={i0} J=1/2
        let y = y_from(&[&[0, 1], &[0, 1], &[0]]);
        assert_eq!(neighbor_groups(0, &y, 5), vec![1, 2]);
        assert_eq!(neighbor_groups(0, &y, 1), vec![1]);
    }

    #[test]
    fn neighbor_ties_break_by_group_id() {
        // both neighbors share 1 of 2 union... g1={i0}, g2={i0}: equal J
        let y = y_from(&[&[0], &[0], &[0]]);
        assert_eq!(neighbor_groups(0, &y, 5), vec![1, 2]);
    }

    /// brute-force oracle: all-pairs float Jaccard + stable sort
    fn neighbor_oracle(group: usize, sets: &[Vec<usize>], top_k: usize) -> Vec<usize> {
        let own: std::collections::HashSet<usize> = sets[group].iter().copied().collect();
        let mut rows: Vec<(usize, f64)> = Vec::new();
        for (other, items) in sets.iter().enumerate() {
            if other == group || own.is_empty() {
                continue;
            }
            let other_set: std::collections::HashSet<usize> = items.iter().copied().collect();
            let inter = own.intersection(&other_set).count();
            if inter == 0 {
                continue;
            }
            let union = own.union(&other_set).count();
            rows.push((other, inter as f64 / union as f64));
        }
        rows.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        rows.truncate(top_k);
        rows.into_iter().map(|(g, _)| g).collect()
    }

    proptest! {
        #[test]
        fn neighbors_match_brute_force_oracle(
            sets in proptest::collection::vec(proptest::collection::vec(0usize..10, 0..6), 1..20),
            top_k in 1usize..8,
        ) {
            let dedup: Vec<Vec<usize>> = sets
                .iter()
                .map(|s| {
                    let mut s = s.clone();
                    s.sort_unstable();
                    s.dedup();
                    s
                })
                .collect();
            let slices: Vec<&[usize]> = dedup.iter().map(Vec::as_slice).collect();
            let y = y_from(&slices);
            for g in 0..dedup.len() {
                prop_assert_eq!(neighbor_groups(g, &y, top_k), neighbor_oracle(g, &dedup, top_k));
            }
        }
    }

    #[test]
    fn inter_topic_sentinel_and_embedding_of_neighbor_text() {
        let client = mock_client(1);
        assert_eq!(inter_topic(&client, &[]).unwrap(), NO_TOPIC);
        let t = inter_topic(&client, &["beach trips and sun".to_string()]).unwrap();
        assert!(t.contains("beach trips and sun"));
    }

    #[test]
    fn fuse_short_circuits() {
        let client = mock_client(1);
        assert_eq!(
            fuse_topic(&client, "beach trips", NO_TOPIC).unwrap(),
            "beach trips"
        );
        assert_eq!(fuse_topic(&client, NO_TOPIC, NO_TOPIC).unwrap(), NO_TOPIC);
        let fused = fuse_topic(&client, "beach trips", "coastal walks").unwrap();
        assert!(fused.contains("beach trips") && fused.contains("coastal walks"));
    }

    #[test]
    fn hash_embedder_unit_norm_and_deterministic() {
        let e = HashEmbedder::new(3, 16);
        let v1 = e.embed("lakes and hiking").unwrap();
        let v2 = e.embed("lakes and hiking").unwrap();
        assert_eq!(v1, v2);
        let norm: f64 = v1
            .as_slice()
            .iter()
            .map(|&x| f64::from(x).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
        assert!((cosine(&v1, &e.embed("lakes and hiking").unwrap()) - 1.0).abs() < 1e-9);
        // empty text still embeds to a unit vector
        let empty = e.embed("").unwrap();
        let n: f64 = empty
            .as_slice()
            .iter()
            .map(|&x| f64::from(x).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!((n - 1.0).abs() < 1e-6);
    }

    #[test]
    fn cosine_is_symmetric() {
        let e = HashEmbedder::new(9, 32);
        let a = e.embed("alpha beta gamma").unwrap();
        let b = e.embed("delta epsilon").unwrap();
        assert!((cosine(&a, &b) - cosine(&b, &a)).abs() < 1e-12);
    }

    #[test]
    fn leader_singleton_and_matching_keywords() {
        let e = HashEmbedder::new(3, 32);
        let topic = e.embed("tibetan culture and landscapes").unwrap();
        let only = [("u1", e.embed("anything at all").unwrap())];
        assert_eq!(select_leader(&topic, &only), Some("u1"));

        let members = [
            ("u1", e.embed("fast cars").unwrap()),
            ("u2", e.embed("tibetan culture and landscapes").unwrap()),
        ];
        assert_eq!(select_leader(&topic, &members), Some("u2"));
    }

    #[test]
    fn leader_tie_breaks_to_lowest_user_id() {
        let e = HashEmbedder::new(3, 32);
        let topic = e.embed("shared").unwrap();
        let same = e.embed("identical words").unwrap();
        let members = [("u9", same.clone()), ("u2", same.clone()), ("u5", same)];
        assert_eq!(select_leader(&topic, &members), Some("u2"));
    }

    #[test]
    fn leader_argmax_scale_invariant() {
        // scaling every raw vector by a positive scalar leaves the argmax alone
        let raws = [
            vec![0.2f32, -1.0, 0.5, 0.7],
            vec![1.0f32, 0.3, -0.2, 0.1],
            vec![-0.4f32, 0.9, 0.8, -0.3],
        ];
        let topic_raw = vec![0.5f32, 0.1, 0.6, 0.2];
        for scale in [0.01f32, 1.0, 250.0] {
            let topic = TextEmbedding::from_raw(topic_raw.clone()).unwrap();
            let members: Vec<(&str, TextEmbedding)> = raws
                .iter()
                .enumerate()
                .map(|(i, raw)| {
                    let scaled: Vec<f32> = raw.iter().map(|&x| x * scale).collect();
                    (
                        ["u1", "u2", "u3"][i],
                        TextEmbedding::from_raw(scaled).unwrap(),
                    )
                })
                .collect();
            assert_eq!(
                select_leader(&topic, &members),
                select_leader(&topic, &{
                    raws.iter()
                        .enumerate()
                        .map(|(i, raw)| {
                            (
                                ["u1", "u2", "u3"][i],
                                TextEmbedding::from_raw(raw.clone()).unwrap(),
                            )
                        })
                        .collect::<Vec<_>>()
                })
            );
        }
    }

    #[test]
    fn context_store_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let store = ContextStore::open(dir.path()).unwrap();
        let ctx = GroupContext {
            group_id: "g1".into(),
            intra_topic: "a".into(),
            inter_topic: "b".into(),
            topic: "c".into(),
            neighbors: vec!["g2".into()],
            leader: None,
            fingerprint: "fp".into(),
        };
        store.save(&ctx).unwrap();
        let loaded = store.load("g1").unwrap().unwrap();
        assert_eq!(loaded, ctx);
        // leader omitted from the serialized form when disabled
        let raw = fs::read_to_string(dir.path().join("g1.json")).unwrap();
        assert!(!raw.contains("leader"));
    }
}
