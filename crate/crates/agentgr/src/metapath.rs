//! Multi-view meta-path construction over the user/item/group network.
//!
//! The user view counts walks of the pattern user(->item->user)^(h-1)->item
//! from the user-item adjacency; the group view counts walks of the pattern
//! user(->group->selected-user)^(h-1)->item, where "selected" members are the
//! ones an LLM rates as highly aligned with their group. Entries are walk
//! counts, not booleans: multiplicity is the evidence strength the
//! textualizer reports.

use std::collections::BTreeMap;

use crate::dataset::{Catalog, InteractionStore};
use crate::error::{Error, Result};
use crate::llm::template::names;
use crate::llm::{parse_rating, AlignmentLevel, LlmClient, PromptRequest};
use crate::sparse::SparseMatrix;

/// Per-order walk-count matrices for both views. `user_view[1]` is exactly
/// the boolean user-item adjacency; the group view only exists from order 2.
#[derive(Debug, Clone)]
pub struct MetaPathSet {
    pub user_view: BTreeMap<usize, SparseMatrix>,
    pub group_view: BTreeMap<usize, SparseMatrix>,
    pub max_order: usize,
}

/// Build the user-view matrices for orders 1..=max_order.
pub fn build_user_view(
    a_ui: &SparseMatrix,
    max_order: usize,
) -> Result<BTreeMap<usize, SparseMatrix>> {
    assert!(max_order >= 1, "max_order must be >= 1");
    let mut out = BTreeMap::new();
    out.insert(1, a_ui.clone());
    if max_order == 1 {
        return Ok(out);
    }
    let step = a_ui.matmul(&a_ui.transpose())?;
    let mut current = a_ui.clone();
    for h in 2..=max_order {
        current = step.matmul(&current)?;
        out.insert(h, current.clone());
    }
    Ok(out)
}

/// Build the group-view matrices for orders 2..=max_order (empty when
/// max_order < 2).
pub fn build_group_view(
    a_ug: &SparseMatrix,
    selected_gu: &SparseMatrix,
    a_ui: &SparseMatrix,
    max_order: usize,
) -> Result<BTreeMap<usize, SparseMatrix>> {
    let mut out = BTreeMap::new();
    if max_order < 2 {
        return Ok(out);
    }
    let step = a_ug.matmul(selected_gu)?;
    let mut current = step.matmul(a_ui)?;
    out.insert(2, current.clone());
    for h in 3..=max_order {
        current = step.matmul(&current)?;
        out.insert(h, current.clone());
    }
    Ok(out)
}

/// LLM alignment ratings per (group, user) membership edge, and the resulting
/// selected-member matrix.
#[derive(Debug, Clone)]
pub struct MemberAlignment {
    pub ratings: BTreeMap<(usize, usize), AlignmentLevel>,
    pub selected: SparseMatrix,
}

/// Rate how well one member's tastes align with the group's, three-level.
///
/// `group_items` and `member_items` are `id: description` lines, pre-sorted
/// by id so identical inputs render identical prompts regardless of file
/// order. The reply is parsed tolerantly; an unparseable reply after retries
/// surfaces the raw text.
pub fn rate_member_alignment(
    client: &LlmClient,
    group_items: &[String],
    member_items: &[String],
) -> Result<AlignmentLevel> {
    let req = PromptRequest::new(names::MEMBER_ALIGNMENT)
        .list("group_items", group_items.to_vec())
        .list("member_items", member_items.to_vec());
    client.complete_parsed(&req, "rating", parse_rating)
}

/// Selection with fallback: members rated high, else members rated medium,
/// else every member — an empty row would annihilate the group view.
pub fn build_selected_members(
    b: &SparseMatrix,
    ratings: &BTreeMap<(usize, usize), AlignmentLevel>,
) -> Result<SparseMatrix> {
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for g in 0..b.rows() {
        let members: Vec<usize> = b.row(g).map(|(u, _)| u).collect();
        if members.is_empty() {
            continue;
        }
        let mut by_level: BTreeMap<AlignmentLevel, Vec<usize>> = BTreeMap::new();
        for &u in &members {
            let level = ratings
                .get(&(g, u))
                .copied()
                .ok_or_else(|| Error::Data(format!("member ({g}, {u}) has no alignment rating")))?;
            by_level.entry(level).or_default().push(u);
        }
        let chosen: &[usize] = if let Some(high) = by_level.get(&AlignmentLevel::High) {
            high
        } else if let Some(medium) = by_level.get(&AlignmentLevel::Medium) {
            medium
        } else {
            &members
        };
        pairs.extend(chosen.iter().map(|&u| (g, u)));
    }
    Ok(SparseMatrix::from_binary_pairs(b.rows(), b.cols(), &pairs))
}

/// Rate every membership edge and build the selected-member matrix.
pub fn build_member_alignment(
    client: &LlmClient,
    catalog: &Catalog,
    train: &InteractionStore,
) -> Result<MemberAlignment> {
    let mut ratings = BTreeMap::new();
    for g in 0..catalog.n_groups() {
        let group_items = item_lines(catalog, &train.group_items(g));
        for u in train.members(g) {
            let member_items = item_lines(catalog, &train.user_items(u));
            let level = rate_member_alignment(client, &group_items, &member_items)?;
            ratings.insert((g, u), level);
        }
    }
    let selected = build_selected_members(&train.b, &ratings)?;
    Ok(MemberAlignment { ratings, selected })
}

/// Build both views from the training split.
pub fn build_metapaths(
    train: &InteractionStore,
    selected_gu: &SparseMatrix,
    max_order: usize,
) -> Result<MetaPathSet> {
    let user_view = build_user_view(&train.x, max_order)?;
    let a_ug = train.b.transpose();
    let group_view = build_group_view(&a_ug, selected_gu, &train.x, max_order)?;
    Ok(MetaPathSet {
        user_view,
        group_view,
        max_order,
    })
}

const DESC_CLIP: usize = 80;

fn clip(text: &str) -> String {
    if text.chars().count() <= DESC_CLIP {
        text.to_string()
    } else {
        let clipped: String = text.chars().take(DESC_CLIP).collect();
        format!("{clipped}…")
    }
}

/// `id: description` lines for a sorted index slice.
pub fn item_lines(catalog: &Catalog, items: &[usize]) -> Vec<String> {
    items
        .iter()
        .map(|&i| {
            format!(
                "{}: {}",
                catalog.item_id(i),
                clip(catalog.item_description(i))
            )
        })
        .collect()
}

/// Render one user's row of a view as evidence lines, one per order.
///
/// Per order the top `top_k` items by walk count are listed, counts
/// descending and ties broken by ascending item id; order 1 is labeled as the
/// direct interactions and omits counts (they are always 1 there).
pub fn textualize_metapaths(
    view: &BTreeMap<usize, SparseMatrix>,
    user: usize,
    catalog: &Catalog,
    top_k: usize,
) -> Vec<String> {
    let mut lines = Vec::new();
    for (&h, matrix) in view {
        // row entries arrive in ascending item index = ascending item id,
        // so a stable sort by count keeps the id tiebreak
        let mut entries: Vec<(usize, u64)> = matrix.row(user).collect();
        entries.sort_by_key(|&(_, count)| std::cmp::Reverse(count));
        entries.truncate(top_k);
        let label = if h == 1 {
            "direct interactions".to_string()
        } else {
            format!("order {h} evidence")
        };
        if entries.is_empty() {
            lines.push(format!("{label}: none"));
            continue;
        }
        let rendered: Vec<String> = entries
            .iter()
            .map(|&(item, count)| {
                let id = catalog.item_id(item);
                let desc = clip(catalog.item_description(item));
                if h == 1 {
                    format!("{id} ({desc})")
                } else {
                    format!("{id} ({desc}) x{count}")
                }
            })
            .collect();
        lines.push(format!("{label}: {}", rendered.join("; ")));
    }
    lines
}

/// Whether a user has any walk evidence in the view.
pub fn has_evidence(view: &BTreeMap<usize, SparseMatrix>, user: usize) -> bool {
    view.values().any(|m| m.row_nnz(user) > 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{LlmSettings, MockBackend, ScriptedBackend};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn binary(rows: usize, cols: usize, pairs: &[(usize, usize)]) -> SparseMatrix {
        SparseMatrix::from_binary_pairs(rows, cols, pairs)
    }

    #[test]
    fn order_one_is_the_adjacency() {
        let a = binary(3, 4, &[(0, 1), (2, 3), (2, 0)]);
        let views = build_user_view(&a, 3).unwrap();
        assert_eq!(views[&1], a);
    }

    #[test]
    fn user_view_order_two_matches_hand_expansion() {
        // A = [[1,1],[0,1]]; (A A^T) A = [[2,3],[1,2]]
        let a = binary(2, 2, &[(0, 0), (0, 1), (1, 1)]);
        let views = build_user_view(&a, 2).unwrap();
        assert_eq!(views[&2].to_dense(), vec![vec![2, 3], vec![1, 2]]);
    }

    #[test]
    fn zero_adjacency_stays_zero() {
        let a = SparseMatrix::zero(3, 3);
        let views = build_user_view(&a, 3).unwrap();
        for h in 1..=3 {
            assert_eq!(views[&h].nnz(), 0);
        }
    }

    #[test]
    fn group_view_on_two_member_group() {
        // one group containing u1, u2, both selected; A_UI = identity
        let a_ug = binary(2, 1, &[(0, 0), (1, 0)]);
        let selected = binary(1, 2, &[(0, 0), (0, 1)]);
        let a_ui = binary(2, 2, &[(0, 0), (1, 1)]);
        let views = build_group_view(&a_ug, &selected, &a_ui, 3).unwrap();
        assert_eq!(views[&2].to_dense(), vec![vec![1, 1], vec![1, 1]]);
        assert_eq!(views[&3].to_dense(), vec![vec![2, 2], vec![2, 2]]);
    }

    #[test]
    fn empty_selection_annihilates_group_view() {
        let a_ug = binary(2, 1, &[(0, 0), (1, 0)]);
        let selected = SparseMatrix::zero(1, 2);
        let a_ui = binary(2, 2, &[(0, 0), (1, 1)]);
        let views = build_group_view(&a_ug, &selected, &a_ui, 3).unwrap();
        assert_eq!(views[&2].nnz(), 0);
        assert_eq!(views[&3].nnz(), 0);
    }

    #[test]
    fn group_view_empty_below_order_two() {
        let a_ug = binary(1, 1, &[(0, 0)]);
        let selected = binary(1, 1, &[(0, 0)]);
        let a_ui = binary(1, 1, &[(0, 0)]);
        assert!(build_group_view(&a_ug, &selected, &a_ui, 1)
            .unwrap()
            .is_empty());
    }

    fn level(
        ratings: &[((usize, usize), AlignmentLevel)],
    ) -> BTreeMap<(usize, usize), AlignmentLevel> {
        ratings.iter().copied().collect()
    }

    #[test]
    fn selection_keeps_high_members() {
        use AlignmentLevel::*;
        let b = binary(1, 2, &[(0, 0), (0, 1)]);
        let sel = build_selected_members(&b, &level(&[((0, 0), High), ((0, 1), Low)])).unwrap();
        assert_eq!(sel.to_dense(), vec![vec![1, 0]]);
    }

    #[test]
    fn selection_falls_back_to_medium_then_all() {
        use AlignmentLevel::*;
        let b = binary(1, 2, &[(0, 0), (0, 1)]);
        let sel = build_selected_members(&b, &level(&[((0, 0), Low), ((0, 1), Medium)])).unwrap();
        assert_eq!(sel.to_dense(), vec![vec![0, 1]]);
        let b1 = binary(1, 1, &[(0, 0)]);
        let sel = build_selected_members(&b1, &level(&[((0, 0), Low)])).unwrap();
        assert_eq!(sel.to_dense(), vec![vec![1]]);
    }

    #[test]
    fn rating_parses_fixture_and_errors_on_garbage() {
        let client = |reply: &str| {
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
        let g = vec!["i1: a".to_string()];
        let m = vec!["i2: b".to_string()];
        assert_eq!(
            rate_member_alignment(&client("high"), &g, &m).unwrap(),
            AlignmentLevel::High
        );
        assert_eq!(
            rate_member_alignment(&client("  Medium."), &g, &m).unwrap(),
            AlignmentLevel::Medium
        );
        let err = rate_member_alignment(&client("very aligned"), &g, &m).unwrap_err();
        assert!(matches!(err, Error::UnparseableReply { raw, .. } if raw == "very aligned"));
    }

    fn mini_catalog() -> Catalog {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("user_item.tsv"), "u1\ti1\n").unwrap();
        std::fs::write(dir.path().join("group_item.tsv"), "g1\ti1\n").unwrap();
        std::fs::write(dir.path().join("group_user.tsv"), "g1\tu1\ng1\tu2\n").unwrap();
        std::fs::write(
            dir.path().join("items.tsv"),
            "i1\tlake resort\ni2\talpine trail\ni3\tbeach\n",
        )
        .unwrap();
        let paths = crate::dataset::DataPaths::under(dir.path());
        crate::dataset::load_catalog(&paths).unwrap().0
    }

    #[test]
    fn textualize_cold_user() {
        let catalog = mini_catalog();
        let view: BTreeMap<usize, SparseMatrix> =
            [(1, SparseMatrix::zero(2, 3))].into_iter().collect();
        let lines = textualize_metapaths(&view, 0, &catalog, 5);
        assert_eq!(lines, vec!["direct interactions: none"]);
        assert!(!has_evidence(&view, 0));
    }

    #[test]
    fn textualize_ties_break_by_item_id() {
        let catalog = mini_catalog();
        // counts {i1:3, i2:3}: top_k=1 keeps i1
        let m = SparseMatrix::from_triplets(1, 3, &[(0, 0, 3), (0, 1, 3)]);
        let view: BTreeMap<usize, SparseMatrix> = [(2, m)].into_iter().collect();
        let lines = textualize_metapaths(&view, 0, &catalog, 1);
        assert_eq!(lines, vec!["order 2 evidence: i1 (lake resort) x3"]);
    }

    #[test]
    fn textualize_top_k_by_count() {
        let catalog = mini_catalog();
        let m = SparseMatrix::from_triplets(1, 3, &[(0, 0, 5), (0, 1, 3), (0, 2, 1)]);
        let view: BTreeMap<usize, SparseMatrix> = [(2, m)].into_iter().collect();
        let lines = textualize_metapaths(&view, 0, &catalog, 2);
        assert_eq!(
            lines,
            vec!["order 2 evidence: i1 (lake resort) x5; i2 (alpine trail) x3"]
        );
    }

    // --- enumeration oracle for property tests -----------------------------

    /// Count user(->item->user)^(h-1)->item walks by explicit traversal.
    fn enumerate_user_view(adj: &[Vec<bool>], n_items: usize, h: usize) -> Vec<Vec<u64>> {
        let n_users = adj.len();
        let mut counts = vec![vec![0u64; n_items]; n_users];
        for u in 0..n_users {
            // frontier over users reached after k (item,user) round trips
            let mut frontier = vec![0u64; n_users];
            frontier[u] = 1;
            for _ in 0..h - 1 {
                let mut next = vec![0u64; n_users];
                for (mid, &ways) in frontier.iter().enumerate() {
                    if ways == 0 {
                        continue;
                    }
                    for item in 0..n_items {
                        if !adj[mid][item] {
                            continue;
                        }
                        for (dest, row) in adj.iter().enumerate() {
                            if row[item] {
                                next[dest] += ways;
                            }
                        }
                    }
                }
                frontier = next;
            }
            for (last, &ways) in frontier.iter().enumerate() {
                if ways == 0 {
                    continue;
                }
                for item in 0..n_items {
                    if adj[last][item] {
                        counts[u][item] += ways;
                    }
                }
            }
        }
        counts
    }

    proptest! {
        #[test]
        fn user_view_matches_walk_enumeration(
            n_users in 1usize..8,
            n_items in 1usize..10,
            edges in proptest::collection::vec((0usize..8, 0usize..10), 0..20),
            h in 1usize..4,
        ) {
            let pairs: Vec<(usize, usize)> = edges
                .into_iter()
                .filter(|&(u, i)| u < n_users && i < n_items)
                .collect();
            let a = binary(n_users, n_items, &pairs);
            let mut adj = vec![vec![false; n_items]; n_users];
            for &(u, i) in &pairs {
                adj[u][i] = true;
            }
            let views = build_user_view(&a, h).unwrap();
            prop_assert_eq!(views[&h].to_dense(), enumerate_user_view(&adj, n_items, h));
        }

        // direct support never disappears at higher orders
        #[test]
        fn monotone_support(
            edges in proptest::collection::vec((0usize..6, 0usize..8), 1..15),
            h in 2usize..4,
        ) {
            let a = binary(6, 8, &edges);
            let views = build_user_view(&a, h).unwrap();
            for (u, i, _) in a.iter() {
                prop_assert!(views[&h].get(u, i) >= 1, "lost support at ({u},{i}) order {h}");
            }
        }

        // relabeling users permutes rows identically
        #[test]
        fn user_permutation_equivariance(
            edges in proptest::collection::vec((0usize..5, 0usize..6), 0..12),
            h in 1usize..4,
        ) {
            let n_users = 5;
            let a = binary(n_users, 6, &edges);
            let perm = [2usize, 0, 4, 1, 3];
            let permuted_edges: Vec<(usize, usize)> =
                edges.iter().map(|&(u, i)| (perm[u], i)).collect();
            let b = binary(n_users, 6, &permuted_edges);
            let va = build_user_view(&a, h).unwrap();
            let vb = build_user_view(&b, h).unwrap();
            let da = va[&h].to_dense();
            let db = vb[&h].to_dense();
            for u in 0..n_users {
                prop_assert_eq!(&da[u], &db[perm[u]]);
            }
        }
    }

    #[test]
    fn member_alignment_end_to_end_with_mock() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("user_item.tsv"), "u1\ti1\nu2\ti2\n").unwrap();
        std::fs::write(dir.path().join("group_item.tsv"), "g1\ti1\ng1\ti2\n").unwrap();
        std::fs::write(dir.path().join("group_user.tsv"), "g1\tu1\ng1\tu2\n").unwrap();
        std::fs::write(dir.path().join("items.tsv"), "i1\ta\ni2\tb\n").unwrap();
        let paths = crate::dataset::DataPaths::under(dir.path());
        let (catalog, _) = crate::dataset::load_catalog(&paths).unwrap();
        let store = crate::dataset::load_interactions(&catalog, &paths).unwrap();
        let client = LlmClient::new(Arc::new(MockBackend::new(3)), None, LlmSettings::default());
        let alignment = build_member_alignment(&client, &catalog, &store).unwrap();
        assert_eq!(alignment.ratings.len(), 2);
        // fallback guarantees a non-empty selection row for the group
        assert!(alignment.selected.row_nnz(0) >= 1);
        let set = build_metapaths(&store, &alignment.selected, 2).unwrap();
        assert_eq!(set.user_view.len(), 2);
        assert_eq!(set.group_view.len(), 1);
    }
}
