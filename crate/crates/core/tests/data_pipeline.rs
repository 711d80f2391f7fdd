mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::{rng, two_tier_spec};
use protofair::data::{
    assign_groups, build_table, generate_synthetic, split_leave_one_out, CountrySpec, FilterOptions, InteractionTable, SynthSpec,
};
use protofair::RawInteraction;
use proptest::prelude::*;
use rand::Rng;

fn raw(rows: &[(&str, &str)]) -> Vec<RawInteraction> {
    rows.iter().map(|(u, i)| RawInteraction::new(*u, *i)).collect()
}

/// Largest user/item sub-table whose induced rows satisfy both thresholds,
/// found by trying every pair of user and item subsets.
fn brute_fixed_point(rows: &[(String, String)], min_user: usize, min_item: usize) -> BTreeSet<(String, String)> {
    let users: Vec<&String> = rows.iter().map(|r| &r.0).collect::<BTreeSet<_>>().into_iter().collect();
    let items: Vec<&String> = rows.iter().map(|r| &r.1).collect::<BTreeSet<_>>().into_iter().collect();
    let mut best: BTreeSet<(String, String)> = BTreeSet::new();
    for um in 0u32..(1 << users.len()) {
        for im in 0u32..(1 << items.len()) {
            let keep: BTreeSet<(String, String)> = rows
                .iter()
                .filter(|(u, i)| {
                    um >> users.iter().position(|x| *x == u).unwrap() & 1 == 1 && im >> items.iter().position(|x| *x == i).unwrap() & 1 == 1
                })
                .cloned()
                .collect();
            let mut uc: BTreeMap<&String, usize> = BTreeMap::new();
            let mut ic: BTreeMap<&String, usize> = BTreeMap::new();
            for (u, i) in &keep {
                *uc.entry(u).or_default() += 1;
                *ic.entry(i).or_default() += 1;
            }
            if uc.values().all(|&c| c >= min_user) && ic.values().all(|&c| c >= min_item) && keep.len() > best.len() {
                best = keep;
            }
        }
    }
    best
}

fn table_rows(t: &InteractionTable) -> BTreeSet<(String, String)> {
    t.pairs().iter().map(|&(u, i)| (t.user_keys()[u].clone(), t.item_keys()[i].clone())).collect()
}

#[test]
fn chain_pruning_reaches_the_brute_force_fixed_point() {
    // Dropping item d drops u4, which drops c, which drops u3.
    let rows = [("u1", "a"), ("u1", "b"), ("u2", "a"), ("u2", "b"), ("u3", "b"), ("u3", "c"), ("u4", "c"), ("u4", "d")];
    let opts = FilterOptions { min_user: 2, min_item: 2, require_country: false };
    let (t, _, stats) = build_table(&raw(&rows), opts, None).unwrap();
    let owned: Vec<(String, String)> = rows.iter().map(|(u, i)| (u.to_string(), i.to_string())).collect();
    assert_eq!(table_rows(&t), brute_fixed_point(&owned, 2, 2));
    assert_eq!((t.num_users(), t.num_items()), (2, 2));
    assert!(stats.passes >= 2, "passes = {}", stats.passes);
}

#[test]
fn ten_country_quantile_example() {
    // Country k has total 10 * (k + 1).
    let mut pairs = Vec::new();
    for k in 0..10 {
        for u in 0..10 * (k + 1) {
            pairs.push((u, k));
        }
    }
    let t = InteractionTable::from_index_pairs(100, 10, pairs).unwrap();
    let countries: Vec<Option<String>> = (0..10).map(|k| Some(format!("C{}", 10 * (k + 1)))).collect();
    let g = assign_groups(&t, &countries).unwrap();
    assert_eq!(g.overrepresented, BTreeSet::from(["C100".to_string()]));
    assert_eq!(g.underrepresented, BTreeSet::from(["C40".to_string(), "C50".to_string()]));
}

#[test]
fn uniform_popularity_gives_flat_counts() {
    let spec = SynthSpec {
        n_users: 1000,
        n_items: 200,
        draws_per_user: 20,
        draws_per_user_max: None,
        gamma: 0.0,
        countries: vec![CountrySpec { code: "AA".into(), item_share: 1.0, multiplier: 1.0 }],
    };
    for seed in 0..5 {
        let (t, _) = generate_synthetic(&spec, seed).unwrap();
        let c = t.item_counts();
        let (lo, hi) = (*c.iter().min().unwrap(), *c.iter().max().unwrap());
        assert!((hi as f64) < 3.0 * lo as f64, "seed {seed}: counts {lo}..{hi}");
    }
}

#[test]
fn low_multiplier_country_fills_the_long_tail() {
    let mut spec = two_tier_spec(2000, 1000, 15, 1, 1, 0.2);
    spec.countries[1].code = "LO".into();
    for seed in 0..3 {
        let (_, g) = generate_synthetic(&spec, seed).unwrap();
        let from_low = g.long_tail_items.iter().filter(|&&i| g.country_of(i) == Some("LO")).count();
        assert_eq!(g.long_tail_items.len(), 100);
        assert!(from_low as f64 >= 0.7 * 100.0, "seed {seed}: {from_low} of 100");
    }
}

fn random_rows(seed: u64, n_users: usize, n_items: usize, density: f64) -> Vec<(String, String)> {
    let mut r = rng(seed);
    let mut rows = Vec::new();
    for u in 0..n_users {
        for i in 0..n_items {
            if r.gen_bool(density) {
                rows.push((format!("u{u}"), format!("i{i}")));
            }
        }
    }
    rows
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pruning_matches_exhaustive_search(seed in 0u64..1_000_000, nu in 1usize..6, ni in 1usize..6, mu in 1usize..4, mi in 1usize..4) {
        let rows = random_rows(seed, nu, ni, 0.6);
        prop_assume!(!rows.is_empty());
        let raws: Vec<RawInteraction> = rows.iter().map(|(u, i)| RawInteraction::new(u.clone(), i.clone())).collect();
        let want = brute_fixed_point(&rows, mu, mi);
        let opts = FilterOptions { min_user: mu, min_item: mi, require_country: false };
        match build_table(&raws, opts, None) {
            Ok((t, _, stats)) => {
                prop_assert_eq!(table_rows(&t), want);
                prop_assert_eq!(stats.interactions_after, t.num_interactions());
                // Idempotent: filtering the output again changes nothing.
                let (again, _, _) = build_table(&t.to_raw(), opts, None).unwrap();
                prop_assert_eq!(table_rows(&again), table_rows(&t));
            }
            Err(_) => prop_assert!(want.is_empty()),
        }
    }

    #[test]
    fn quantile_bands_match_brute_force(seed in 0u64..1_000_000, c in 4usize..16) {
        let mut r = rng(seed);
        let totals: Vec<usize> = (0..c).map(|_| r.gen_range(1..30)).collect();
        let n_users = *totals.iter().max().unwrap();
        let pairs: Vec<(usize, usize)> = totals.iter().enumerate().flat_map(|(k, &t)| (0..t).map(move |u| (u, k))).collect();
        let t = InteractionTable::from_index_pairs(n_users, c, pairs).unwrap();
        let codes: Vec<String> = (0..c).map(|k| format!("K{k:02}")).collect();
        let g = assign_groups(&t, &codes.iter().cloned().map(Some).collect::<Vec<_>>()).unwrap();

        let mut order: Vec<usize> = (0..c).collect();
        order.sort_by(|&a, &b| totals[a].cmp(&totals[b]).then(codes[a].cmp(&codes[b])));
        let (mut over, mut under) = (BTreeSet::new(), BTreeSet::new());
        for (pos, &k) in order.iter().enumerate() {
            let q = pos as f64 / c as f64;
            if q >= 0.9 || pos == c - 1 {
                over.insert(codes[k].clone());
            } else if (0.25..0.5).contains(&q) {
                under.insert(codes[k].clone());
            }
        }
        prop_assert_eq!(g.overrepresented, over);
        prop_assert_eq!(g.underrepresented, under);
    }

    #[test]
    fn split_respects_histories(seed in 0u64..1_000_000) {
        let spec = two_tier_spec(40, 150, 6, 2, 2, 0.3);
        let (t, _) = generate_synthetic(&spec, seed).unwrap();
        let s = split_leave_one_out(&t, seed).unwrap();
        prop_assert_eq!(s.test.len(), t.num_users());
        prop_assert_eq!(s.train.num_interactions() + s.test.len(), t.num_interactions());
        for c in &s.test {
            prop_assert!(t.contains(c.user, c.positive));
            prop_assert!(!s.train.contains(c.user, c.positive));
            prop_assert_eq!(c.negatives.len(), 99);
            prop_assert_eq!(c.negatives.iter().collect::<BTreeSet<_>>().len(), 99);
            prop_assert!(c.negatives.iter().all(|&i| !t.contains(c.user, i)));
        }
    }
}
