//! Interaction data: loading, filtering, grouping, splitting and synthesis.

mod bundle;
mod groups;
mod load;
mod split;
mod synth;
mod table;

pub use bundle::{read_bundle, write_bundle, DatasetBundle};
pub use groups::{assign_groups, assign_groups_explicit, long_tail_items, ItemGroup};
pub use load::{load_interactions, load_item_metadata, load_labels, Delimiter, LoadedInteractions, RowError};
pub use split::{split_leave_one_out, split_leave_one_out_with, SplitDataset, TestCase};
pub use synth::{generate_synthetic, CountrySpec, SynthSpec};
pub use table::{build_table, FilterStats, FilterOptions, InteractionTable};

use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One row of an interactions file, before reindexing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawInteraction {
    pub user_key: String,
    pub item_key: String,
    pub weight: u64,
    pub timestamp: Option<i64>,
}

impl RawInteraction {
    pub fn new(user_key: impl Into<String>, item_key: impl Into<String>) -> Self {
        RawInteraction { user_key: user_key.into(), item_key: item_key.into(), weight: 1, timestamp: None }
    }

    pub fn with_timestamp(mut self, ts: i64) -> Self {
        self.timestamp = Some(ts);
        self
    }
}

/// Item-side groups used by the fairness metrics.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GroupAssignment {
    /// Country code per item index; `None` for items without metadata.
    pub item_country: Vec<Option<String>>,
    pub overrepresented: BTreeSet<String>,
    pub underrepresented: BTreeSet<String>,
    pub long_tail_items: BTreeSet<usize>,
}

impl GroupAssignment {
    pub fn group_of(&self, item: usize) -> Option<ItemGroup> {
        let country = self.item_country.get(item)?.as_deref()?;
        if self.overrepresented.contains(country) {
            Some(ItemGroup::Over)
        } else if self.underrepresented.contains(country) {
            Some(ItemGroup::Under)
        } else {
            None
        }
    }

    pub fn is_long_tail(&self, item: usize) -> bool {
        self.long_tail_items.contains(&item)
    }

    pub fn country_of(&self, item: usize) -> Option<&str> {
        self.item_country.get(item).and_then(|c| c.as_deref())
    }

    pub fn num_items(&self) -> usize {
        self.item_country.len()
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{path}: {count} malformed rows exceed the allowed {allowed} (first at line {first_line}: {first_message})")]
    TooManyBadRows {
        path: PathBuf,
        count: usize,
        allowed: usize,
        first_line: u64,
        first_message: String,
    },
    #[error("no interactions given")]
    EmptyInput,
    #[error("table is empty after filtering (min_user={min_user}, min_item={min_item}, require_country={require_country})")]
    EmptyAfterFilter { min_user: usize, min_item: usize, require_country: bool },
    #[error("item {item} has no country; group assignment needs metadata for every item")]
    MissingCountry { item: usize },
    #[error("only {found} distinct countries; quantile groups need at least 4, configure explicit group lists instead")]
    TooFewCountries { found: usize },
    #[error("user {user} has {count} interactions; leave-one-out needs at least 2")]
    TooFewInteractions { user: usize, count: usize },
    #[error("user {user} has only {available} non-interacted items; {needed} negatives requested")]
    NegativePoolTooSmall { user: usize, available: usize, needed: usize },
    #[error("infeasible synthetic spec: {0}")]
    InfeasibleSpec(String),
    #[error("invalid table: {0}")]
    InvalidTable(String),
}

impl DataError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DataError::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        DataError::Format { path: path.into(), message: message.into() }
    }
}
