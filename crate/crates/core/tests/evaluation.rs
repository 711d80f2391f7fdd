mod common;

use std::collections::BTreeSet;

use common::{brute_evaluate, rng};
use protofair::data::{GroupAssignment, TestCase};
use protofair::eval::{evaluate, report_from_lists, RankedList};
use protofair::model::{Dims, Filtering, ModelKind};
use protofair::PrototypeModel;
use proptest::prelude::*;
use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn random_groups(n_items: usize, r: &mut ChaCha8Rng) -> GroupAssignment {
    let codes = ["A", "B", "C", "D", "E"];
    GroupAssignment {
        // Some items stay without a country; they are ranked but never averaged.
        item_country: (0..n_items).map(|_| r.gen_bool(0.9).then(|| codes[r.gen_range(0..5)].to_string())).collect(),
        overrepresented: BTreeSet::from(["A".to_string()]),
        underrepresented: BTreeSet::from(["C".to_string(), "D".to_string()]),
        long_tail_items: (0..n_items).filter(|_| r.gen_bool(0.2)).collect(),
    }
}

fn random_cases(n_users: usize, n_items: usize, list_len: usize, r: &mut ChaCha8Rng) -> Vec<TestCase> {
    (0..n_users)
        .map(|user| {
            let picked = index::sample(r, n_items, list_len).into_vec();
            let mut negatives = picked[1..].to_vec();
            negatives.sort_unstable();
            TestCase { user, positive: picked[0], negatives }
        })
        .collect()
}

fn random_model(n_users: usize, n_items: usize, r: &mut ChaCha8Rng) -> PrototypeModel {
    let dims = Dims { n_users, n_items, dim: 3, user_protos: 3, item_protos: 4 };
    let f = Filtering { user: r.gen_bool(0.5), item: r.gen_bool(0.5) };
    let mut m = PrototypeModel::random(ModelKind::Protomf, dims, 2, 2, f, r).unwrap();
    m.params_mut().into_iter().for_each(|p| p.as_mut_slice().iter_mut().for_each(|x| *x = r.gen_range(-1.0..1.0)));
    m
}

#[test]
fn evaluate_matches_brute_force_on_tiny_instances() {
    for seed in 0..200 {
        let mut r = rng(seed);
        let n_users = r.gen_range(1..=10);
        let n_items = r.gen_range(2..=20);
        let list_len = r.gen_range(2..=n_items);
        let model = random_model(n_users, n_items, &mut r);
        let groups = random_groups(n_items, &mut r);
        let cases = random_cases(n_users, n_items, list_len, &mut r);
        let got = evaluate(&model, &cases, &groups, model.filtering, "cfg").unwrap();
        let want = brute_evaluate(&cases, |u, i| model.affinity(u, i, model.filtering).unwrap(), &groups, 10);
        assert_eq!(got.hr_at_10, want.hr, "seed {seed}");
        assert!((got.ndcg_at_10 - want.ndcg).abs() < 1e-15, "seed {seed}");
        assert_eq!(got.mu_under, want.mu_under, "seed {seed}");
        assert_eq!(got.mu_over, want.mu_over, "seed {seed}");
        assert_eq!(got.mu_long_tail, want.mu_lt, "seed {seed}");
        assert_eq!([got.n_under_occurrences, got.n_over_occurrences, got.n_long_tail_occurrences], want.counts);
    }
}

#[test]
fn heavy_ties_match_brute_force() {
    for seed in 0..100 {
        let mut r = rng(seed + 7);
        let n_items = 20;
        let groups = random_groups(n_items, &mut r);
        let cases = random_cases(10, n_items, 15, &mut r);
        let table: Vec<Vec<f64>> = (0..10).map(|_| (0..n_items).map(|_| r.gen_range(0..3) as f64).collect()).collect();
        let lists: Vec<RankedList> = cases
            .iter()
            .map(|c| {
                let cands = c.candidates();
                let s: Vec<f64> = cands.iter().map(|&i| table[c.user][i]).collect();
                RankedList::from_scores(c.user, c.positive, &cands, &s).unwrap()
            })
            .collect();
        let got = report_from_lists(&lists, &groups, "").unwrap();
        let want = brute_evaluate(&cases, |u, i| table[u][i], &groups, 10);
        assert_eq!((got.hr_at_10, got.mu_under, got.mu_over, got.mu_long_tail), (want.hr, want.mu_under, want.mu_over, want.mu_lt));
        assert!((got.ndcg_at_10 - want.ndcg).abs() < 1e-15);
    }
}

#[test]
fn perfect_oracle_scores_are_perfect() {
    let mut r = rng(1);
    let groups = random_groups(200, &mut r);
    let cases = random_cases(30, 200, 100, &mut r);
    let positives: Vec<usize> = cases.iter().map(|c| c.positive).collect();
    let rep = report_for(&cases, &groups, |u, i| f64::from(u8::from(i == positives[u])));
    assert_eq!((rep.hr_at_10, rep.ndcg_at_10), (1.0, 1.0));
}

#[test]
fn prefix_group_mean_is_midpoint() {
    // Group items forced to ranks 1..=n_g.
    let n_g = 7;
    let candidates: Vec<usize> = (0..100).collect();
    let scores: Vec<f64> = (0..100).map(|i| -(i as f64)).collect();
    let list = RankedList::from_scores(0, 50, &candidates, &scores).unwrap();
    let groups = GroupAssignment {
        item_country: (0..100).map(|i| Some(if i < n_g { "U" } else { "X" }.to_string())).collect(),
        underrepresented: BTreeSet::from(["U".to_string()]),
        long_tail_items: (90..100).collect(),
        ..Default::default()
    };
    let rep = report_from_lists(&[list], &groups, "").unwrap();
    assert_eq!(rep.mu_under, Some((n_g as f64 + 1.0) / 2.0));
    assert_eq!(rep.mu_over, None);
    assert_eq!(rep.mu_long_tail, Some(95.5));
}

#[test]
fn evaluation_is_deterministic() {
    let mut r = rng(3);
    let model = random_model(40, 150, &mut r);
    let groups = random_groups(150, &mut r);
    let cases = random_cases(40, 150, 100, &mut r);
    let a = evaluate(&model, &cases, &groups, model.filtering, "x").unwrap();
    let b = evaluate(&model, &cases, &groups, model.filtering, "x").unwrap();
    assert_eq!(a, b);
}

fn report_for(cases: &[TestCase], groups: &GroupAssignment, score: impl Fn(usize, usize) -> f64) -> protofair::EvalReport {
    let lists: Vec<RankedList> = cases
        .iter()
        .map(|c| {
            let cands = c.candidates();
            let s: Vec<f64> = cands.iter().map(|&i| score(c.user, i)).collect();
            RankedList::from_scores(c.user, c.positive, &cands, &s).unwrap()
        })
        .collect();
    report_from_lists(&lists, groups, "").unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn metrics_in_range_and_ndcg_below_hr(seed in 0u64..100_000) {
        let mut r = rng(seed);
        let groups = random_groups(120, &mut r);
        let cases = random_cases(20, 120, 100, &mut r);
        let table: Vec<Vec<f64>> = (0..20).map(|_| (0..120).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
        let rep = report_for(&cases, &groups, |u, i| table[u][i]);
        prop_assert!((0.0..=1.0).contains(&rep.hr_at_10));
        prop_assert!(rep.ndcg_at_10 <= rep.hr_at_10);
        for mu in [rep.mu_under, rep.mu_over, rep.mu_long_tail].into_iter().flatten() {
            prop_assert!((1.0..=100.0).contains(&mu));
        }
        prop_assert!(rep.n_under_occurrences + rep.n_over_occurrences <= 100 * 20);
    }

    #[test]
    fn metrics_invariant_under_monotone_transforms(seed in 0u64..100_000) {
        let mut r = rng(seed);
        let groups = random_groups(120, &mut r);
        let cases = random_cases(15, 120, 100, &mut r);
        let table: Vec<Vec<f64>> = (0..15).map(|_| (0..120).map(|_| r.gen_range(0..40) as f64 / 8.0).collect()).collect();
        let base = report_for(&cases, &groups, |u, i| table[u][i]);
        let transforms: [fn(f64) -> f64; 3] = [|x| 3.0 * x - 7.0, |x| x.exp(), |x| x * x * x];
        for t in transforms {
            prop_assert_eq!(&report_for(&cases, &groups, |u, i| t(table[u][i])), &base);
        }
    }
}
