//! Synthetic popularity-skewed datasets with per-country exposure multipliers.

use std::collections::BTreeSet;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::groups::{assign_groups, long_tail_items};
use super::{DataError, GroupAssignment, InteractionTable};
use crate::seed::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountrySpec {
    pub code: String,
    /// Relative share of the catalogue produced by this country.
    pub item_share: f64,
    /// Scales the popularity of every item from this country.
    pub multiplier: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n_users: usize,
    pub n_items: usize,
    /// Items drawn per user; with `draws_per_user_max` set, the lower bound of a uniform range.
    pub draws_per_user: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub draws_per_user_max: Option<usize>,
    /// Zipf exponent: item popularity is proportional to `rank^-gamma`.
    pub gamma: f64,
    pub countries: Vec<CountrySpec>,
}

impl SynthSpec {
    fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::InfeasibleSpec(m));
        let max_draws = self.draws_per_user_max.unwrap_or(self.draws_per_user);
        if self.n_users == 0 || self.n_items == 0 {
            return bad("n_users and n_items must be positive".into());
        }
        if self.draws_per_user == 0 || max_draws < self.draws_per_user {
            return bad(format!("bad draws_per_user range {}..={}", self.draws_per_user, max_draws));
        }
        if max_draws > self.n_items {
            return bad(format!("{max_draws} draws per user without replacement from {} items", self.n_items));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be finite and >= 0, got {}", self.gamma));
        }
        if self.countries.is_empty() {
            return bad("at least one country is required".into());
        }
        for c in &self.countries {
            if !(c.item_share >= 0.0 && c.multiplier > 0.0 && c.item_share.is_finite() && c.multiplier.is_finite()) {
                return bad(format!("country {}: item_share must be >= 0 and multiplier > 0", c.code));
            }
        }
        if self.countries.iter().map(|c| c.item_share).sum::<f64>() <= 0.0 {
            return bad("item shares sum to zero".into());
        }
        let codes: BTreeSet<_> = self.countries.iter().map(|c| c.code.as_str()).collect();
        if codes.len() != self.countries.len() {
            return bad("duplicate country codes".into());
        }
        Ok(())
    }

    /// Largest-remainder apportionment of `n_items` over the country shares.
    fn items_per_country(&self) -> Vec<usize> {
        let total: f64 = self.countries.iter().map(|c| c.item_share).sum();
        let exact: Vec<f64> = self.countries.iter().map(|c| c.item_share / total * self.n_items as f64).collect();
        let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
        let mut rest = self.n_items - counts.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..exact.len()).collect();
        order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
        for k in order.into_iter().cycle() {
            if rest == 0 {
                break;
            }
            counts[k] += 1;
            rest -= 1;
        }
        counts
    }
}

/// Generates a table and its groups.
///
/// Every item gets a random popularity rank and a country; its sampling
/// weight is `rank^-gamma * multiplier(country)`. Users draw items without
/// replacement proportionally to that weight. Items no user drew are then
/// given to one random user, so the table covers every index. Country groups
/// are filled by the quantile rule when there are at least four countries
/// and left empty otherwise.
pub fn generate_synthetic(spec: &SynthSpec, seed: u64) -> Result<(InteractionTable, GroupAssignment), DataError> {
    spec.validate()?;
    let mut rng = rng_for(seed, "synth");
    let (n, m) = (spec.n_users, spec.n_items);

    let mut country_of: Vec<usize> = spec
        .items_per_country()
        .into_iter()
        .enumerate()
        .flat_map(|(c, k)| std::iter::repeat(c).take(k))
        .collect();
    country_of.shuffle(&mut rng);
    let mut rank: Vec<usize> = (1..=m).collect();
    rank.shuffle(&mut rng);
    let weights: Vec<f64> = (0..m)
        .map(|i| (rank[i] as f64).powf(-spec.gamma) * spec.countries[country_of[i]].multiplier)
        .collect();

    let max_draws = spec.draws_per_user_max.unwrap_or(spec.draws_per_user);
    let mut pairs = Vec::new();
    let mut covered = vec![false; m];
    for user in 0..n {
        let draws = rng.gen_range(spec.draws_per_user..=max_draws);
        let picked = index::sample_weighted(&mut rng, m, |i| weights[i], draws)
            .map_err(|e| DataError::InfeasibleSpec(e.to_string()))?;
        for item in picked.into_iter() {
            covered[item] = true;
            pairs.push((user, item));
        }
    }
    for (item, _) in covered.iter().enumerate().filter(|(_, c)| !**c) {
        pairs.push((rng.gen_range(0..n), item));
    }

    let table = InteractionTable::from_index_pairs(n, m, pairs)?;
    table.validate_dense()?;
    let item_country: Vec<Option<String>> = country_of.iter().map(|&c| Some(spec.countries[c].code.clone())).collect();
    let groups = if spec.countries.len() >= 4 {
        assign_groups(&table, &item_country)?
    } else {
        GroupAssignment { long_tail_items: long_tail_items(&table), item_country, ..Default::default() }
    };
    Ok((table, groups))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn country(code: &str, share: f64, mult: f64) -> CountrySpec {
        CountrySpec { code: code.into(), item_share: share, multiplier: mult }
    }

    #[test]
    fn infeasible_draws() {
        let spec = SynthSpec {
            n_users: 10,
            n_items: 5,
            draws_per_user: 20,
            draws_per_user_max: None,
            gamma: 1.0,
            countries: vec![country("US", 1.0, 1.0)],
        };
        assert!(matches!(generate_synthetic(&spec, 0), Err(DataError::InfeasibleSpec(_))));
    }

    #[test]
    fn apportionment_sums_to_items() {
        let spec = SynthSpec {
            n_users: 1,
            n_items: 10,
            draws_per_user: 1,
            draws_per_user_max: None,
            gamma: 0.0,
            countries: vec![country("A", 1.0, 1.0), country("B", 1.0, 1.0), country("C", 1.0, 1.0)],
        };
        let counts = spec.items_per_country();
        assert_eq!(counts.iter().sum::<usize>(), 10);
        assert_eq!(counts, vec![4, 3, 3]);
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = SynthSpec {
            n_users: 30,
            n_items: 40,
            draws_per_user: 3,
            draws_per_user_max: Some(6),
            gamma: 1.0,
            countries: vec![country("A", 1.0, 1.0), country("B", 1.0, 0.5)],
        };
        let a = generate_synthetic(&spec, 9).unwrap();
        let b = generate_synthetic(&spec, 9).unwrap();
        assert_eq!(a, b);
        a.0.validate_dense().unwrap();
    }
}
