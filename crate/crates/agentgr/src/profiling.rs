//! Chain-of-preference user profiling.
//!
//! Three staged reasoning steps per user: induce a preference text per view
//! from the textualized meta-path evidence, integrate the two views into one
//! profile (direct interactions weighted over higher-order signals), then
//! refine the profile into a short keyword list. Cold inputs short-circuit to
//! sentinels without spending backend calls.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::Catalog;
use crate::error::{Error, Result};
use crate::llm::template::names;
use crate::llm::{parse_keyword_lines, LlmClient, PromptRequest};
use crate::metapath::{has_evidence, textualize_metapaths, MetaPathSet};

/// Sentinel preference text for users without evidence in a view.
pub const NO_PREFERENCES: &str = "no observable preferences";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordEntry {
    pub keyword: String,
    pub justification: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    pub user_view_pref: String,
    pub group_view_pref: String,
    pub integrated_pref: String,
    pub keywords: Vec<KeywordEntry>,
    pub fingerprint: String,
}

impl UserProfile {
    /// Canonical keyword text for embedding: keywords in listed order,
    /// comma-joined.
    pub fn keyword_text(&self) -> String {
        self.keywords
            .iter()
            .map(|k| k.keyword.as_str())
            .collect::<Vec<_>>()
            .join(", ")
    }

    /// Keyword lines with justifications, for prompts.
    pub fn keyword_lines(&self) -> Vec<String> {
        self.keywords
            .iter()
            .map(|k| format!("{}: {}", k.keyword, k.justification))
            .collect()
    }
}

/// Which meta-path view a preference text is induced from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum View {
    User,
    Group,
}

impl View {
    fn label(self) -> &'static str {
        match self {
            View::User => "the user's own interaction history",
            View::Group => "groups this user belongs to",
        }
    }

    fn matrices(
        self,
        metapaths: &MetaPathSet,
    ) -> &std::collections::BTreeMap<usize, crate::sparse::SparseMatrix> {
        match self {
            View::User => &metapaths.user_view,
            View::Group => &metapaths.group_view,
        }
    }
}

/// Induce one view's preference text; users with no evidence in the view get
/// the sentinel without a backend call.
pub fn induce_single_view(
    client: &LlmClient,
    user: usize,
    view: View,
    metapaths: &MetaPathSet,
    catalog: &Catalog,
    top_k: usize,
) -> Result<String> {
    let matrices = view.matrices(metapaths);
    if !has_evidence(matrices, user) {
        return Ok(NO_PREFERENCES.to_string());
    }
    let evidence = textualize_metapaths(matrices, user, catalog, top_k);
    let req = PromptRequest::new(names::VIEW_PREFERENCE)
        .text("view_label", view.label())
        .list("evidence", evidence);
    Ok(client.complete(&req)?.text)
}

/// Integrate the two view texts. When either side is the sentinel the other
/// is returned verbatim, with no backend call.
pub fn integrate_views(client: &LlmClient, user_view: &str, group_view: &str) -> Result<String> {
    match (user_view == NO_PREFERENCES, group_view == NO_PREFERENCES) {
        (true, true) => Ok(NO_PREFERENCES.to_string()),
        (true, false) => Ok(group_view.to_string()),
        (false, true) => Ok(user_view.to_string()),
        (false, false) => {
            let req = PromptRequest::new(names::INTEGRATE_PREFERENCES)
                .text("user_view", user_view)
                .text("group_view", group_view);
            Ok(client.complete(&req)?.text)
        }
    }
}

/// Refine an integrated profile into 1..=cap keyword/justification pairs.
pub fn refine_keywords(
    client: &LlmClient,
    integrated: &str,
    cap: usize,
) -> Result<Vec<KeywordEntry>> {
    assert!(cap >= 1, "keyword cap must be >= 1");
    if integrated == NO_PREFERENCES {
        return Ok(vec![KeywordEntry {
            keyword: "unknown".into(),
            justification: "no interaction history".into(),
        }]);
    }
    let req = PromptRequest::new(names::EXTRACT_KEYWORDS)
        .text("cap", cap.to_string())
        .text("preferences", integrated);
    let pairs = client.complete_parsed(&req, "keywords", |text| parse_keyword_lines(text, cap))?;
    Ok(pairs
        .into_iter()
        .map(|(keyword, justification)| KeywordEntry {
            keyword,
            justification,
        })
        .collect())
}

/// Run the full three-stage chain for one user.
pub fn profile_user(
    client: &LlmClient,
    user: usize,
    metapaths: &MetaPathSet,
    catalog: &Catalog,
    top_k: usize,
    keyword_cap: usize,
    fingerprint: &str,
) -> Result<UserProfile> {
    let stage = |what: &'static str, e: Error| {
        log::error!(
            "profiling user {:?} failed at {what}: {e}",
            catalog.user_id(user)
        );
        e
    };
    let user_view_pref = induce_single_view(client, user, View::User, metapaths, catalog, top_k)
        .map_err(|e| stage("user-view induction", e))?;
    let group_view_pref = induce_single_view(client, user, View::Group, metapaths, catalog, top_k)
        .map_err(|e| stage("group-view induction", e))?;
    let integrated_pref = integrate_views(client, &user_view_pref, &group_view_pref)
        .map_err(|e| stage("view integration", e))?;
    let keywords = refine_keywords(client, &integrated_pref, keyword_cap)
        .map_err(|e| stage("keyword refinement", e))?;
    Ok(UserProfile {
        user_id: catalog.user_id(user).to_string(),
        user_view_pref,
        group_view_pref,
        integrated_pref,
        keywords,
        fingerprint: fingerprint.to_string(),
    })
}

/// One JSON document per user in a directory.
#[derive(Debug, Clone)]
pub struct ProfileStore {
    dir: PathBuf,
}

/// Filesystem-safe name for an opaque id; a short hash disambiguates ids that
/// sanitize to the same name.
pub fn safe_filename(id: &str) -> String {
    let sanitized: String = id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect();
    if sanitized == id && !id.is_empty() {
        sanitized
    } else {
        format!(
            "{sanitized}-{:08x}",
            crate::hashutil::stable_hash(0, &[id]) as u32
        )
    }
}

impl ProfileStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, user_id: &str) -> PathBuf {
        self.dir.join(format!("{}.json", safe_filename(user_id)))
    }

    pub fn save(&self, profile: &UserProfile) -> Result<()> {
        let path = self.path_for(&profile.user_id);
        let body = serde_json::to_string_pretty(profile).expect("profile serializes");
        fs::write(&path, body + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(&self, user_id: &str) -> Result<Option<UserProfile>> {
        let path = self.path_for(user_id);
        if !path.exists() {
            return Ok(None);
        }
        let raw = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let profile = serde_json::from_str(&raw)
            .map_err(|e| Error::Data(format!("corrupt profile {}: {e}", path.display())))?;
        Ok(Some(profile))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{load_catalog, load_interactions, DataPaths};
    use crate::llm::{CountingBackend, LlmSettings, MockBackend, ScriptedBackend};
    use crate::metapath::{build_member_alignment, build_metapaths};
    use std::sync::Arc;

    fn mock_client(seed: u64) -> LlmClient {
        LlmClient::new(
            Arc::new(MockBackend::new(seed)),
            None,
            LlmSettings::default(),
        )
    }

    fn fixture(dir: &Path) -> (Catalog, crate::dataset::InteractionStore) {
        fs::write(dir.join("user_item.tsv"), "u1\ti1\nu1\ti2\nu2\ti2\n").unwrap();
        fs::write(dir.join("group_item.tsv"), "g1\ti1\ng1\ti3\n").unwrap();
        // u3 sits alone in an inactive group: cold in both views
        fs::write(dir.join("group_user.tsv"), "g1\tu1\ng1\tu2\ng2\tu3\n").unwrap();
        fs::write(
            dir.join("items.tsv"),
            "i1\tlake resort\ni2\talpine trail\ni3\tbeach town\n",
        )
        .unwrap();
        let paths = DataPaths::under(dir);
        let (catalog, _) = load_catalog(&paths).unwrap();
        let store = load_interactions(&catalog, &paths).unwrap();
        (catalog, store)
    }

    fn metapaths_for(
        client: &LlmClient,
        catalog: &Catalog,
        store: &crate::dataset::InteractionStore,
    ) -> MetaPathSet {
        let alignment = build_member_alignment(client, catalog, store).unwrap();
        build_metapaths(store, &alignment.selected, 2).unwrap()
    }

    #[test]
    fn cold_user_gets_sentinels_and_unknown_keyword() {
        let dir = tempfile::tempdir().unwrap();
        let (catalog, store) = fixture(dir.path());
        let client = mock_client(5);
        let metapaths = metapaths_for(&client, &catalog, &store);
        // u3 never interacted and its only group is inactive
        let u3 = catalog.user_index("u3").unwrap();
        let profile = profile_user(&client, u3, &metapaths, &catalog, 10, 8, "fp").unwrap();
        assert_eq!(profile.user_view_pref, NO_PREFERENCES);
        assert_eq!(profile.group_view_pref, NO_PREFERENCES);
        assert_eq!(profile.integrated_pref, NO_PREFERENCES);
        assert_eq!(profile.keywords[0].keyword, "unknown");
    }

    #[test]
    fn integrate_short_circuits_verbatim() {
        let client = mock_client(1);
        assert_eq!(
            integrate_views(&client, NO_PREFERENCES, "likes lakes").unwrap(),
            "likes lakes"
        );
        assert_eq!(
            integrate_views(&client, NO_PREFERENCES, NO_PREFERENCES).unwrap(),
            NO_PREFERENCES
        );
        assert_eq!(
            integrate_views(&client, "likes hills", NO_PREFERENCES).unwrap(),
            "likes hills"
        );
    }

    #[test]
    fn refine_parses_grammar_and_caps() {
        let scripted = |reply: &str| {
            LlmClient::new(
                Arc::new(ScriptedBackend::new(vec![reply.to_string()])),
                None,
                LlmSettings {
                    max_retries: 1,
                    retry_backoff_ms: 1,
                    ..Default::default()
                },
            )
        };
        let pairs = refine_keywords(
            &scripted("lakes: visited 3 lake resorts\nhiking: alpine trails"),
            "text",
            8,
        )
        .unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].keyword, "lakes");
        let capped = refine_keywords(&scripted("a: x\nb: y\nc: z"), "text", 1).unwrap();
        assert_eq!(capped.len(), 1);
        let sentinel = refine_keywords(&scripted("anything"), NO_PREFERENCES, 4).unwrap();
        assert_eq!(sentinel[0].keyword, "unknown");
    }

    #[test]
    fn profile_is_deterministic_and_contains_intermediates() {
        let dir = tempfile::tempdir().unwrap();
        let (catalog, store) = fixture(dir.path());
        let client = mock_client(5);
        let metapaths = metapaths_for(&client, &catalog, &store);
        let u1 = catalog.user_index("u1").unwrap();
        let p1 = profile_user(&client, u1, &metapaths, &catalog, 10, 8, "fp").unwrap();
        let p2 = profile_user(&client, u1, &metapaths, &catalog, 10, 8, "fp").unwrap();
        assert_eq!(p1, p2);
        assert!(!p1.user_view_pref.is_empty());
        assert!(!p1.integrated_pref.is_empty());
        assert!((1..=8).contains(&p1.keywords.len()));
    }

    #[test]
    fn warm_cache_profiles_without_backend_calls() {
        let dir = tempfile::tempdir().unwrap();
        let cache_dir = tempfile::tempdir().unwrap();
        let (catalog, store) = fixture(dir.path());
        let counting = Arc::new(CountingBackend::new(Arc::new(MockBackend::new(5))));
        let client = LlmClient::new(
            counting.clone(),
            Some(crate::llm::PromptCache::open(cache_dir.path()).unwrap()),
            LlmSettings::default(),
        );
        let metapaths = metapaths_for(&client, &catalog, &store);
        let u1 = catalog.user_index("u1").unwrap();
        profile_user(&client, u1, &metapaths, &catalog, 10, 8, "fp").unwrap();
        let after_first = counting.calls();
        assert!(after_first > 0);
        profile_user(&client, u1, &metapaths, &catalog, 10, 8, "fp").unwrap();
        assert_eq!(counting.calls(), after_first);
    }

    #[test]
    fn store_roundtrip_and_safe_names() {
        let dir = tempfile::tempdir().unwrap();
        let store = ProfileStore::open(dir.path()).unwrap();
        let profile = UserProfile {
            user_id: "user/with:odd ids".into(),
            user_view_pref: "a".into(),
            group_view_pref: "b".into(),
            integrated_pref: "c".into(),
            keywords: vec![KeywordEntry {
                keyword: "k".into(),
                justification: "j".into(),
            }],
            fingerprint: "fp".into(),
        };
        store.save(&profile).unwrap();
        assert_eq!(store.load("user/with:odd ids").unwrap().unwrap(), profile);
        assert_eq!(store.load("absent").unwrap(), None);
        assert_ne!(safe_filename("a/b"), safe_filename("a_b"));
    }
}
