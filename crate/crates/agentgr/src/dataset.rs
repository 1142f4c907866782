//! Dataset loading, leave-one-out splitting and candidate sampling.
//!
//! Input is four headerless UTF-8 TSV files: `user_item.tsv`
//! (user_id, item_id, optional timestamp), `group_item.tsv`
//! (group_id, item_id, optional timestamp), `group_user.tsv`
//! (group_id, user_id) and `items.tsv` (item_id, description). Ids are opaque
//! strings; internally everything is indexed against the sorted id lists in
//! [`Catalog`], which makes index order equal lexicographic id order.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashutil::stable_hash;
use crate::sparse::SparseMatrix;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataPaths {
    pub user_item: PathBuf,
    pub group_item: PathBuf,
    pub group_user: PathBuf,
    pub items: PathBuf,
}

impl DataPaths {
    pub fn under(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        Self {
            user_item: dir.join("user_item.tsv"),
            group_item: dir.join("group_item.tsv"),
            group_user: dir.join("group_user.tsv"),
            items: dir.join("items.tsv"),
        }
    }

    fn all(&self) -> [&PathBuf; 4] {
        [
            &self.user_item,
            &self.group_item,
            &self.group_user,
            &self.items,
        ]
    }
}

/// The id universe: users, items, groups, and item descriptions.
///
/// Id vectors are sorted and unique; `*_idx` maps resolve external ids to
/// dense indices used by every matrix in the pipeline.
#[derive(Debug, Clone)]
pub struct Catalog {
    users: Vec<String>,
    items: Vec<String>,
    groups: Vec<String>,
    item_text: Vec<String>,
    user_idx: HashMap<String, usize>,
    item_idx: HashMap<String, usize>,
    group_idx: HashMap<String, usize>,
}

impl Catalog {
    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn user_id(&self, idx: usize) -> &str {
        &self.users[idx]
    }

    pub fn item_id(&self, idx: usize) -> &str {
        &self.items[idx]
    }

    pub fn group_id(&self, idx: usize) -> &str {
        &self.groups[idx]
    }

    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.user_idx.get(id).copied()
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.item_idx.get(id).copied()
    }

    pub fn group_index(&self, id: &str) -> Option<usize> {
        self.group_idx.get(id).copied()
    }

    pub fn item_description(&self, idx: usize) -> &str {
        &self.item_text[idx]
    }
}

/// Counts of recoverable anomalies found while loading.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadWarnings {
    pub duplicate_items: usize,
}

fn index_of(ids: &[String]) -> HashMap<String, usize> {
    ids.iter()
        .enumerate()
        .map(|(i, s)| (s.clone(), i))
        .collect()
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(raw.lines().map(str::to_string).collect())
}

fn split_tsv<'a>(
    path: &Path,
    line_no: usize,
    line: &'a str,
    min: usize,
    max: usize,
) -> Result<Vec<&'a str>> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() < min || fields.len() > max || fields.iter().take(min).any(|f| f.is_empty()) {
        return Err(Error::Malformed {
            file: path.to_path_buf(),
            line: line_no,
            msg: format!(
                "expected {min}..{max} tab-separated fields, got {}",
                fields.len()
            ),
        });
    }
    Ok(fields)
}

/// Load and validate the id universe from the four TSV files.
///
/// Items come from `items.tsv`; user and group ids are collected from the
/// interaction and membership files. Duplicate item definitions keep the
/// first description and are counted as warnings.
pub fn load_catalog(paths: &DataPaths) -> Result<(Catalog, LoadWarnings)> {
    for p in paths.all() {
        if !p.exists() {
            return Err(Error::io(
                p,
                std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
            ));
        }
    }

    let mut warnings = LoadWarnings::default();
    let mut item_pairs: Vec<(String, String)> = Vec::new();
    let mut seen_items: HashMap<String, ()> = HashMap::new();
    for (i, line) in read_lines(&paths.items)?.iter().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields = split_tsv(&paths.items, i + 1, line, 2, 2)?;
        if fields[1].trim().is_empty() {
            return Err(Error::Malformed {
                file: paths.items.clone(),
                line: i + 1,
                msg: format!("item {:?} has an empty description", fields[0]),
            });
        }
        if seen_items.insert(fields[0].to_string(), ()).is_some() {
            warnings.duplicate_items += 1;
            continue;
        }
        item_pairs.push((fields[0].to_string(), fields[1].to_string()));
    }
    if item_pairs.is_empty() {
        return Err(Error::Data("no items".into()));
    }
    item_pairs.sort_by(|a, b| a.0.cmp(&b.0));

    let mut users: Vec<String> = Vec::new();
    let mut groups: Vec<String> = Vec::new();
    for (i, line) in read_lines(&paths.user_item)?.iter().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields = split_tsv(&paths.user_item, i + 1, line, 2, 3)?;
        users.push(fields[0].to_string());
    }
    for (i, line) in read_lines(&paths.group_item)?.iter().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields = split_tsv(&paths.group_item, i + 1, line, 2, 3)?;
        groups.push(fields[0].to_string());
    }
    for (i, line) in read_lines(&paths.group_user)?.iter().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields = split_tsv(&paths.group_user, i + 1, line, 2, 2)?;
        groups.push(fields[0].to_string());
        users.push(fields[1].to_string());
    }
    users.sort();
    users.dedup();
    groups.sort();
    groups.dedup();

    let (items, item_text): (Vec<String>, Vec<String>) = item_pairs.into_iter().unzip();
    let catalog = Catalog {
        user_idx: index_of(&users),
        item_idx: index_of(&items),
        group_idx: index_of(&groups),
        users,
        items,
        groups,
        item_text,
    };
    if warnings.duplicate_items > 0 {
        log::warn!(
            "{} duplicate item definition(s) ignored",
            warnings.duplicate_items
        );
    }
    Ok((catalog, warnings))
}

/// One group-item interaction event in file order, with its optional
/// timestamp. Kept so the leave-one-out split can order interactions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InteractionEvent {
    pub group: usize,
    pub item: usize,
    pub timestamp: Option<i64>,
    pub file_index: usize,
}

/// The three boolean relations plus the raw group-item event log.
#[derive(Debug, Clone)]
pub struct InteractionStore {
    /// user-item interactions, |U| x |I|
    pub x: SparseMatrix,
    /// group-item interactions, |G| x |I|
    pub y: SparseMatrix,
    /// group-user membership, |G| x |U|
    pub b: SparseMatrix,
    events: Vec<InteractionEvent>,
}

impl InteractionStore {
    pub fn events(&self) -> &[InteractionEvent] {
        &self.events
    }

    /// Copy of this store with the given (group, item) cells removed from Y;
    /// X and B are untouched. This is how a training store is derived from
    /// the full store and a set of held-out pairs.
    pub fn without_pairs(&self, held: &std::collections::HashSet<(usize, usize)>) -> Self {
        let events: Vec<InteractionEvent> = self
            .events
            .iter()
            .filter(|e| !held.contains(&(e.group, e.item)))
            .copied()
            .collect();
        let y_pairs: Vec<(usize, usize)> = events.iter().map(|e| (e.group, e.item)).collect();
        Self {
            x: self.x.clone(),
            y: SparseMatrix::from_binary_pairs(self.y.rows(), self.y.cols(), &y_pairs),
            b: self.b.clone(),
            events,
        }
    }

    /// Members of a group, ascending user index (= ascending user id).
    pub fn members(&self, group: usize) -> Vec<usize> {
        self.b.row(group).map(|(u, _)| u).collect()
    }

    /// Items the group interacted with, ascending item index.
    pub fn group_items(&self, group: usize) -> Vec<usize> {
        self.y.row(group).map(|(i, _)| i).collect()
    }

    /// Items the user interacted with, ascending item index.
    pub fn user_items(&self, user: usize) -> Vec<usize> {
        self.x.row(user).map(|(i, _)| i).collect()
    }
}

fn parse_timestamp(path: &Path, line_no: usize, raw: &str) -> Result<i64> {
    raw.trim().parse::<i64>().map_err(|_| Error::Malformed {
        file: path.to_path_buf(),
        line: line_no,
        msg: format!("bad timestamp {raw:?}"),
    })
}

/// Populate the sparse relations; repeated pairs collapse to a single 1.
pub fn load_interactions(catalog: &Catalog, paths: &DataPaths) -> Result<InteractionStore> {
    let mut x_pairs: Vec<(usize, usize)> = Vec::new();
    for (i, line) in read_lines(&paths.user_item)?.iter().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields = split_tsv(&paths.user_item, i + 1, line, 2, 3)?;
        let u = catalog
            .user_index(fields[0])
            .ok_or_else(|| Error::UnknownId {
                kind: "user",
                id: fields[0].to_string(),
                file: paths.user_item.clone(),
            })?;
        let it = catalog
            .item_index(fields[1])
            .ok_or_else(|| Error::UnknownId {
                kind: "item",
                id: fields[1].to_string(),
                file: paths.user_item.clone(),
            })?;
        if fields.len() == 3 {
            parse_timestamp(&paths.user_item, i + 1, fields[2])?;
        }
        x_pairs.push((u, it));
    }

    let mut events: Vec<InteractionEvent> = Vec::new();
    for (i, line) in read_lines(&paths.group_item)?.iter().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields = split_tsv(&paths.group_item, i + 1, line, 2, 3)?;
        let g = catalog
            .group_index(fields[0])
            .ok_or_else(|| Error::UnknownId {
                kind: "group",
                id: fields[0].to_string(),
                file: paths.group_item.clone(),
            })?;
        let it = catalog
            .item_index(fields[1])
            .ok_or_else(|| Error::UnknownId {
                kind: "item",
                id: fields[1].to_string(),
                file: paths.group_item.clone(),
            })?;
        let timestamp = if fields.len() == 3 {
            Some(parse_timestamp(&paths.group_item, i + 1, fields[2])?)
        } else {
            None
        };
        events.push(InteractionEvent {
            group: g,
            item: it,
            timestamp,
            file_index: events.len(),
        });
    }

    let mut b_pairs: Vec<(usize, usize)> = Vec::new();
    for (i, line) in read_lines(&paths.group_user)?.iter().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields = split_tsv(&paths.group_user, i + 1, line, 2, 2)?;
        let g = catalog
            .group_index(fields[0])
            .ok_or_else(|| Error::UnknownId {
                kind: "group",
                id: fields[0].to_string(),
                file: paths.group_user.clone(),
            })?;
        let u = catalog
            .user_index(fields[1])
            .ok_or_else(|| Error::UnknownId {
                kind: "user",
                id: fields[1].to_string(),
                file: paths.group_user.clone(),
            })?;
        b_pairs.push((g, u));
    }

    let y_pairs: Vec<(usize, usize)> = events.iter().map(|e| (e.group, e.item)).collect();
    let store = InteractionStore {
        x: SparseMatrix::from_binary_pairs(catalog.n_users(), catalog.n_items(), &x_pairs),
        y: SparseMatrix::from_binary_pairs(catalog.n_groups(), catalog.n_items(), &y_pairs),
        b: SparseMatrix::from_binary_pairs(catalog.n_groups(), catalog.n_users(), &b_pairs),
        events,
    };

    for g in 0..catalog.n_groups() {
        if store.b.row_nnz(g) == 0 {
            return Err(Error::Data(format!(
                "group {:?} has no members in {}",
                catalog.group_id(g),
                paths.group_user.display()
            )));
        }
    }
    Ok(store)
}

/// How interactions within a group are ordered for leave-one-out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InteractionOrder {
    /// Timestamp first when present, stable file order as tiebreak; events
    /// without a timestamp sort before timestamped ones.
    #[default]
    TimestampThenFile,
    /// Pure file order, timestamps ignored.
    FileOrder,
}

/// One evaluation case: a group, its held-out item, and (after
/// [`sample_candidates`]) the shuffled candidate list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestCase {
    pub group: usize,
    pub positive: usize,
    pub candidates: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct EvaluationSplit {
    pub train: InteractionStore,
    pub test_cases: Vec<TestCase>,
}

/// Hold out each group's last interaction.
///
/// Groups with a single distinct interacted item are excluded from the test
/// cases but keep that interaction in training; groups with none are ignored.
pub fn leave_one_out_split(store: &InteractionStore, order: InteractionOrder) -> EvaluationSplit {
    let n_groups = store.y.rows();
    let mut per_group: Vec<Vec<&InteractionEvent>> = vec![Vec::new(); n_groups];
    for event in &store.events {
        per_group[event.group].push(event);
    }

    let mut held_out: Vec<(usize, usize)> = Vec::new();
    for (g, events) in per_group.iter_mut().enumerate() {
        if store.y.row_nnz(g) < 2 {
            continue;
        }
        match order {
            InteractionOrder::TimestampThenFile => {
                events.sort_by_key(|e| (e.timestamp.unwrap_or(i64::MIN), e.file_index))
            }
            InteractionOrder::FileOrder => events.sort_by_key(|e| e.file_index),
        }
        let last = events.last().expect("nnz >= 2 implies events");
        held_out.push((g, last.item));
    }

    let held: std::collections::HashSet<(usize, usize)> = held_out.iter().copied().collect();
    let train = store.without_pairs(&held);
    let test_cases = held_out
        .into_iter()
        .map(|(group, positive)| TestCase {
            group,
            positive,
            candidates: Vec::new(),
        })
        .collect();
    EvaluationSplit { train, test_cases }
}

/// Fill each test case with `n_negatives` negatives plus the positive,
/// shuffled. Negatives are drawn uniformly without replacement from items the
/// group never interacted with, using an independent per-case stream derived
/// from the global seed and the group id; when fewer are available, all of
/// them are taken and a warning is counted.
pub fn sample_candidates(
    split: &mut EvaluationSplit,
    full: &InteractionStore,
    catalog: &Catalog,
    n_negatives: usize,
    seed: u64,
) -> usize {
    assert!(n_negatives >= 1, "n_negatives must be >= 1");
    let n_items = catalog.n_items();
    let mut exhausted = 0usize;
    for case in &mut split.test_cases {
        let interacted: std::collections::HashSet<usize> =
            full.y.row(case.group).map(|(i, _)| i).collect();
        let mut pool: Vec<usize> = (0..n_items).filter(|i| !interacted.contains(i)).collect();
        let stream = stable_hash(seed, &["candidates", catalog.group_id(case.group)]);
        let mut rng = ChaCha8Rng::seed_from_u64(stream);
        let take = if pool.len() < n_negatives {
            exhausted += 1;
            log::warn!(
                "group {:?}: only {} non-interacted items for {} negatives",
                catalog.group_id(case.group),
                pool.len(),
                n_negatives
            );
            pool.len()
        } else {
            n_negatives
        };
        // partial Fisher-Yates: the first `take` entries are the sample
        for k in 0..take {
            let j = k + rng.gen_range(0..pool.len() - k);
            pool.swap(k, j);
        }
        let mut candidates: Vec<usize> = pool[..take].to_vec();
        candidates.push(case.positive);
        candidates.shuffle(&mut rng);
        case.candidates = candidates;
    }
    exhausted
}
