//! Country groups and the long-tail item set.
//!
//! Countries are ranked by their total interaction count (ascending, ties by
//! code). With `C` countries, the country at 0-based position `a` has
//! percentile `a / C`. Overrepresented countries sit in the top decile
//! (`a / C >= 0.9`), widened to the single top country when fewer than ten
//! countries leave that band empty. Underrepresented ones sit in the
//! `[0.25, 0.5)` band, which leaves out the sparsest quarter of countries.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{DataError, GroupAssignment, InteractionTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ItemGroup {
    Over,
    Under,
}

pub(crate) fn country_totals(table: &InteractionTable, item_country: &[Option<String>]) -> Result<BTreeMap<String, usize>, DataError> {
    let mut totals = BTreeMap::new();
    for (item, count) in table.item_counts().into_iter().enumerate() {
        let country = item_country
            .get(item)
            .and_then(|c| c.clone())
            .ok_or(DataError::MissingCountry { item })?;
        *totals.entry(country).or_insert(0) += count;
    }
    Ok(totals)
}

/// The `floor(0.1 * M)` least-interacted items, ties broken by lower index.
pub fn long_tail_items(table: &InteractionTable) -> BTreeSet<usize> {
    let counts = table.item_counts();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by_key(|&i| (counts[i], i));
    order.truncate(counts.len() / 10);
    order.into_iter().collect()
}

/// Quantile-band country groups plus the long-tail set.
pub fn assign_groups(table: &InteractionTable, item_country: &[Option<String>]) -> Result<GroupAssignment, DataError> {
    let totals = country_totals(table, item_country)?;
    let c = totals.len();
    if c < 4 {
        return Err(DataError::TooFewCountries { found: c });
    }
    let mut ranked: Vec<(&String, usize)> = totals.iter().map(|(k, &v)| (k, v)).collect();
    ranked.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(b.0)));

    let mut over = BTreeSet::new();
    let mut under = BTreeSet::new();
    for (a, (code, _)) in ranked.into_iter().enumerate() {
        if 10 * a >= 9 * c || a == c - 1 {
            over.insert(code.clone());
        } else if 4 * a >= c && 2 * a < c {
            under.insert(code.clone());
        }
    }
    Ok(GroupAssignment {
        item_country: item_country.to_vec(),
        overrepresented: over,
        underrepresented: under,
        long_tail_items: long_tail_items(table),
    })
}

/// Group assignment with caller-supplied country lists.
pub fn assign_groups_explicit(
    table: &InteractionTable,
    item_country: &[Option<String>],
    overrepresented: BTreeSet<String>,
    underrepresented: BTreeSet<String>,
) -> Result<GroupAssignment, DataError> {
    if let Some(c) = overrepresented.intersection(&underrepresented).next() {
        return Err(DataError::InvalidTable(format!("country {c} is listed as both over- and underrepresented")));
    }
    Ok(GroupAssignment {
        item_country: item_country.to_vec(),
        overrepresented,
        underrepresented,
        long_tail_items: long_tail_items(table),
    })
}
