//! Leave-one-out splitting with sampled negatives.

use std::collections::BTreeSet;

use rand::seq::index;
use rand::Rng;

use super::{DataError, InteractionTable};
use crate::seed::rng_for;

/// One held-out evaluation case.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestCase {
    pub user: usize,
    pub positive: usize,
    /// Sorted, disjoint from everything the user interacted with.
    pub negatives: Vec<usize>,
}

impl TestCase {
    /// Positive first, then negatives.
    pub fn candidates(&self) -> Vec<usize> {
        std::iter::once(self.positive).chain(self.negatives.iter().copied()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    /// Interactions minus the held-out ones; same index space as the source table.
    pub train: InteractionTable,
    /// One case per user, ordered by user index.
    pub test: Vec<TestCase>,
}

impl SplitDataset {
    pub fn num_users(&self) -> usize {
        self.train.num_users()
    }

    pub fn num_items(&self) -> usize {
        self.train.num_items()
    }

    /// Carves a validation split out of the train half: one more held-out item
    /// per user that still has at least two train interactions. Negatives
    /// avoid the user's whole history, the test positive included.
    pub fn validation_split(&self, seed: u64, n_negatives: usize) -> Result<SplitDataset, DataError> {
        let test_pos: Vec<Option<usize>> = {
            let mut v = vec![None; self.num_users()];
            for c in &self.test {
                v[c.user] = Some(c.positive);
            }
            v
        };
        hold_out(&self.train, seed, "validation", n_negatives, true, |u| test_pos[u])
    }
}

/// Leave-one-out with the conventional 99 sampled negatives.
pub fn split_leave_one_out(table: &InteractionTable, seed: u64) -> Result<SplitDataset, DataError> {
    split_leave_one_out_with(table, seed, 99)
}

/// Per user: hold out the latest interaction when all of the user's rows
/// carry timestamps (ties go to the larger item index), otherwise a
/// seeded-uniform one; then draw `n_negatives` distinct never-interacted items.
pub fn split_leave_one_out_with(table: &InteractionTable, seed: u64, n_negatives: usize) -> Result<SplitDataset, DataError> {
    hold_out(table, seed, "split", n_negatives, false, |_| None)
}

fn hold_out(
    table: &InteractionTable,
    seed: u64,
    label: &str,
    n_negatives: usize,
    skip_small_users: bool,
    extra_exclusion: impl Fn(usize) -> Option<usize>,
) -> Result<SplitDataset, DataError> {
    let mut rng = rng_for(seed, label);
    let m = table.num_items();

    // timestamps indexed like pairs; pairs are sorted by user so each user is a contiguous run
    let mut offsets = vec![0usize; table.num_users() + 1];
    for &(u, _) in table.pairs() {
        offsets[u + 1] += 1;
    }
    for u in 0..table.num_users() {
        offsets[u + 1] += offsets[u];
    }

    let mut removed = BTreeSet::new();
    let mut test = Vec::with_capacity(table.num_users());
    for user in 0..table.num_users() {
        let items = table.user_items(user);
        if items.len() < 2 {
            if skip_small_users {
                continue;
            }
            return Err(DataError::TooFewInteractions { user, count: items.len() });
        }
        let extra = extra_exclusion(user);
        let extra_in_pool = extra.is_some_and(|e| items.binary_search(&e).is_err());
        let available = m - items.len() - usize::from(extra_in_pool);
        if available < n_negatives {
            return Err(DataError::NegativePoolTooSmall { user, available, needed: n_negatives });
        }

        let stamps = &table.timestamps()[offsets[user]..offsets[user + 1]];
        let positive = if stamps.iter().all(Option::is_some) {
            let (pos, _) = items
                .iter()
                .zip(stamps)
                .max_by_key(|(&item, ts)| (ts.unwrap(), item))
                .expect("nonempty");
            *pos
        } else {
            items[rng.gen_range(0..items.len())]
        };

        let pool: Vec<usize> = (0..m)
            .filter(|i| items.binary_search(i).is_err() && Some(*i) != extra)
            .collect();
        let mut negatives: Vec<usize> = index::sample(&mut rng, pool.len(), n_negatives)
            .into_iter()
            .map(|k| pool[k])
            .collect();
        negatives.sort_unstable();

        removed.insert((user, positive));
        test.push(TestCase { user, positive, negatives });
    }
    Ok(SplitDataset { train: table.without(&removed), test })
}
