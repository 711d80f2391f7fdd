//! Deduplicated, densely indexed interaction tables and the iterative
//! threshold filter that produces them.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::{DataError, GroupAssignment, RawInteraction};

/// Implicit-feedback interactions over dense user/item indices.
///
/// Pairs are unique and kept sorted by `(user, item)`. Tables produced by
/// [`build_table`] additionally cover every user and item index; the train
/// half of a split shares the full index space and may leave items uncovered.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionTable {
    user_keys: Vec<String>,
    item_keys: Vec<String>,
    pairs: Vec<(usize, usize)>,
    timestamps: Vec<Option<i64>>,
    user_items: Vec<Vec<usize>>,
    item_users: Vec<Vec<usize>>,
}

impl InteractionTable {
    /// Builds a table from index pairs. Duplicate pairs keep the latest timestamp.
    pub fn from_pairs(
        user_keys: Vec<String>,
        item_keys: Vec<String>,
        pairs: impl IntoIterator<Item = (usize, usize, Option<i64>)>,
    ) -> Result<Self, DataError> {
        let (n, m) = (user_keys.len(), item_keys.len());
        let mut merged: BTreeMap<(usize, usize), Option<i64>> = BTreeMap::new();
        for (u, i, ts) in pairs {
            if u >= n || i >= m {
                return Err(DataError::InvalidTable(format!("pair ({u},{i}) outside {n}x{m}")));
            }
            merged
                .entry((u, i))
                .and_modify(|cur| *cur = later(*cur, ts))
                .or_insert(ts);
        }
        let mut user_items = vec![Vec::new(); n];
        let mut item_users = vec![Vec::new(); m];
        let mut out_pairs = Vec::with_capacity(merged.len());
        let mut timestamps = Vec::with_capacity(merged.len());
        for ((u, i), ts) in merged {
            user_items[u].push(i);
            item_users[i].push(u);
            out_pairs.push((u, i));
            timestamps.push(ts);
        }
        Ok(InteractionTable { user_keys, item_keys, pairs: out_pairs, timestamps, user_items, item_users })
    }

    /// Index-keyed table (`"0"`, `"1"`, ...) for synthetic and test data.
    pub fn from_index_pairs(num_users: usize, num_items: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self, DataError> {
        Self::from_pairs(
            (0..num_users).map(|u| format!("u{u}")).collect(),
            (0..num_items).map(|i| format!("i{i}")).collect(),
            pairs.into_iter().map(|(u, i)| (u, i, None)),
        )
    }

    pub fn num_users(&self) -> usize {
        self.user_keys.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_keys.len()
    }

    pub fn num_interactions(&self) -> usize {
        self.pairs.len()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn timestamp(&self, idx: usize) -> Option<i64> {
        self.timestamps[idx]
    }

    pub fn timestamps(&self) -> &[Option<i64>] {
        &self.timestamps
    }

    pub fn user_items(&self, user: usize) -> &[usize] {
        &self.user_items[user]
    }

    pub fn item_users(&self, item: usize) -> &[usize] {
        &self.item_users[item]
    }

    pub fn contains(&self, user: usize, item: usize) -> bool {
        self.user_items[user].binary_search(&item).is_ok()
    }

    pub fn user_keys(&self) -> &[String] {
        &self.user_keys
    }

    pub fn item_keys(&self) -> &[String] {
        &self.item_keys
    }

    pub fn item_counts(&self) -> Vec<usize> {
        self.item_users.iter().map(Vec::len).collect()
    }

    /// Checks the dense-coverage invariants: nonempty, every user and item has an interaction.
    pub fn validate_dense(&self) -> Result<(), DataError> {
        if self.num_users() == 0 || self.num_items() == 0 {
            return Err(DataError::InvalidTable("no users or items".into()));
        }
        if let Some(u) = self.user_items.iter().position(Vec::is_empty) {
            return Err(DataError::InvalidTable(format!("user {u} has no interactions")));
        }
        if let Some(i) = self.item_users.iter().position(Vec::is_empty) {
            return Err(DataError::InvalidTable(format!("item {i} has no interactions")));
        }
        Ok(())
    }

    /// Same index space, with the given pairs dropped.
    pub fn without(&self, removed: &BTreeSet<(usize, usize)>) -> Self {
        let kept = self
            .pairs
            .iter()
            .zip(&self.timestamps)
            .filter(|(p, _)| !removed.contains(p))
            .map(|(&(u, i), &ts)| (u, i, ts));
        Self::from_pairs(self.user_keys.clone(), self.item_keys.clone(), kept).expect("subset of a valid table")
    }

    /// Converts back to keyed rows (weight 1).
    pub fn to_raw(&self) -> Vec<RawInteraction> {
        self.pairs
            .iter()
            .zip(&self.timestamps)
            .map(|(&(u, i), &ts)| RawInteraction {
                user_key: self.user_keys[u].clone(),
                item_key: self.item_keys[i].clone(),
                weight: 1,
                timestamp: ts,
            })
            .collect()
    }
}

fn later(a: Option<i64>, b: Option<i64>) -> Option<i64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.max(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FilterOptions {
    pub min_user: usize,
    pub min_item: usize,
    pub require_country: bool,
}

impl Default for FilterOptions {
    fn default() -> Self {
        FilterOptions { min_user: 1, min_item: 1, require_country: false }
    }
}

/// Before/after counts of the filter, as printed by `prepare`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FilterStats {
    pub raw_rows: usize,
    pub users_before: usize,
    pub items_before: usize,
    pub interactions_before: usize,
    pub users_after: usize,
    pub items_after: usize,
    pub interactions_after: usize,
    /// Number of pruning passes until nothing changed (at least 1).
    pub passes: usize,
}

impl FilterStats {
    fn pct_drop(before: usize, after: usize) -> f64 {
        if before == 0 {
            0.0
        } else {
            100.0 * (before - after) as f64 / before as f64
        }
    }

    pub fn summary(&self) -> String {
        format!(
            "           before      after\n\
             users      {:>8} {:>10} (-{:.1}%)\n\
             items      {:>8} {:>10} (-{:.1}%)\n\
             interact.  {:>8} {:>10} (-{:.1}%)",
            self.users_before,
            self.users_after,
            Self::pct_drop(self.users_before, self.users_after),
            self.items_before,
            self.items_after,
            Self::pct_drop(self.items_before, self.items_after),
            self.interactions_before,
            self.interactions_after,
            Self::pct_drop(self.interactions_before, self.interactions_after),
        )
    }
}

/// Deduplicates raw rows, prunes cold users/items to a fixed point and
/// reindexes densely in sorted key order.
///
/// The returned [`GroupAssignment`] only has `item_country` filled in.
pub fn build_table(
    raw: &[RawInteraction],
    opts: FilterOptions,
    metadata: Option<&BTreeMap<String, String>>,
) -> Result<(InteractionTable, GroupAssignment, FilterStats), DataError> {
    if raw.is_empty() {
        return Err(DataError::EmptyInput);
    }
    let mut dedup: HashMap<(&str, &str), Option<i64>> = HashMap::new();
    for r in raw {
        dedup
            .entry((r.user_key.as_str(), r.item_key.as_str()))
            .and_modify(|cur| *cur = later(*cur, r.timestamp))
            .or_insert(r.timestamp);
    }
    let mut stats = FilterStats {
        raw_rows: raw.len(),
        users_before: raw.iter().map(|r| r.user_key.as_str()).collect::<BTreeSet<_>>().len(),
        items_before: raw.iter().map(|r| r.item_key.as_str()).collect::<BTreeSet<_>>().len(),
        interactions_before: dedup.len(),
        ..Default::default()
    };

    let has_country = |item: &str| metadata.is_some_and(|m| m.contains_key(item));
    let mut alive: Vec<((&str, &str), Option<i64>)> = dedup
        .into_iter()
        .filter(|((_, item), _)| !opts.require_country || has_country(item))
        .collect();
    alive.sort_unstable_by(|a, b| a.0.cmp(&b.0));

    loop {
        stats.passes += 1;
        let mut user_count: HashMap<&str, usize> = HashMap::new();
        let mut item_count: HashMap<&str, usize> = HashMap::new();
        for ((u, i), _) in &alive {
            *user_count.entry(u).or_default() += 1;
            *item_count.entry(i).or_default() += 1;
        }
        let before = alive.len();
        alive.retain(|((u, i), _)| user_count[u] >= opts.min_user && item_count[i] >= opts.min_item);
        if alive.len() == before {
            break;
        }
    }
    if alive.is_empty() {
        return Err(DataError::EmptyAfterFilter {
            min_user: opts.min_user,
            min_item: opts.min_item,
            require_country: opts.require_country,
        });
    }

    let user_keys: Vec<String> = alive.iter().map(|((u, _), _)| *u).collect::<BTreeSet<_>>().into_iter().map(String::from).collect();
    let item_keys: Vec<String> = alive.iter().map(|((_, i), _)| *i).collect::<BTreeSet<_>>().into_iter().map(String::from).collect();
    let user_idx: HashMap<&str, usize> = user_keys.iter().enumerate().map(|(k, s)| (s.as_str(), k)).collect();
    let item_idx: HashMap<&str, usize> = item_keys.iter().enumerate().map(|(k, s)| (s.as_str(), k)).collect();
    let pairs: Vec<_> = alive.iter().map(|((u, i), ts)| (user_idx[u], item_idx[i], *ts)).collect();

    let item_country = item_keys.iter().map(|k| metadata.and_then(|m| m.get(k).cloned())).collect();
    let table = InteractionTable::from_pairs(user_keys, item_keys, pairs)?;
    stats.users_after = table.num_users();
    stats.items_after = table.num_items();
    stats.interactions_after = table.num_interactions();
    Ok((table, GroupAssignment { item_country, ..Default::default() }, stats))
}
