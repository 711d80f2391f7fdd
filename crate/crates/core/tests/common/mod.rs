#![allow(dead_code)]

use protofair::data::{CountrySpec, GroupAssignment, SynthSpec, TestCase};
use protofair::model::{Dims, Filtering, ModelKind, PrototypeModel};
use protofair::Matrix;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Relative error with a floor on the denominator so that vanishing
/// gradients are compared absolutely.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic.iter().zip(numeric).map(|(a, n)| rel_err(*a, *n)).fold(0.0, f64::max)
}

pub const FD_STEP: f64 = 1e-5;

/// Central differences of `f` with respect to every entry of `x`.
pub fn fd_vec(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|j| {
            let orig = p[j];
            p[j] = orig + FD_STEP;
            let up = f(&p);
            p[j] = orig - FD_STEP;
            let down = f(&p);
            p[j] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Central differences of `f` for every model parameter, in `params()` order.
pub fn fd_model(model: &PrototypeModel, f: impl Fn(&PrototypeModel) -> f64) -> Vec<Vec<f64>> {
    let mut m = model.clone();
    (0..6)
        .map(|k| {
            let n = model.params()[k].as_slice().len();
            (0..n)
                .map(|j| {
                    let orig = m.params()[k].as_slice()[j];
                    m.params_mut()[k].as_mut_slice()[j] = orig + FD_STEP;
                    let up = f(&m);
                    m.params_mut()[k].as_mut_slice()[j] = orig - FD_STEP;
                    let down = f(&m);
                    m.params_mut()[k].as_mut_slice()[j] = orig;
                    (up - down) / (2.0 * FD_STEP)
                })
                .collect()
        })
        .collect()
}

/// Tiny random problem for gradient checks.
#[derive(Debug, Clone)]
pub struct GradInstance {
    pub model: PrototypeModel,
    /// `(user, item)` positives.
    pub batch: Vec<(usize, usize)>,
    pub item_negatives: Vec<Vec<usize>>,
    pub user_negatives: Vec<Vec<usize>>,
    pub filtering: Filtering,
}

pub fn grad_instance(seed: u64, kind: ModelKind) -> GradInstance {
    let mut r = rng(seed);
    let n_users = r.gen_range(2..=6);
    let n_items = r.gen_range(3..=8);
    let dims = Dims {
        n_users,
        n_items,
        dim: r.gen_range(2..=4),
        user_protos: r.gen_range(1..=3),
        item_protos: r.gen_range(1..=3),
    };
    let filtering = Filtering { user: r.gen_bool(0.5), item: r.gen_bool(0.5) };
    let k_user = r.gen_range(1..=dims.user_protos);
    let k_item = r.gen_range(1..=dims.item_protos);
    let mut model = PrototypeModel::random(kind, dims, k_user, k_item, filtering, &mut r).unwrap();
    // Larger weights than the training initialization make the checks less trivial.
    for m in model.params_mut() {
        m.as_mut_slice().iter_mut().for_each(|x| *x = r.gen_range(-1.0..1.0));
    }
    let b = r.gen_range(1..=4);
    let mut batch = Vec::new();
    let mut item_negatives = Vec::new();
    let mut user_negatives = Vec::new();
    for _ in 0..b {
        let (u, i) = (r.gen_range(0..n_users), r.gen_range(0..n_items));
        batch.push((u, i));
        let others = |r: &mut ChaCha8Rng, n: usize, skip: usize| -> Vec<usize> {
            let pool: Vec<usize> = (0..n).filter(|&x| x != skip).collect();
            let k = r.gen_range(1..=pool.len().min(3));
            index::sample(r, pool.len(), k).into_iter().map(|j| pool[j]).collect()
        };
        item_negatives.push(others(&mut r, n_items, i));
        user_negatives.push(others(&mut r, n_users, u));
    }
    GradInstance { model, batch, item_negatives, user_negatives, filtering }
}

pub fn random_matrix(rows: usize, cols: usize, r: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| r.gen_range(-1.0..1.0)).collect())
}

/// Every metric of the evaluation, computed by counting pairwise wins
/// instead of sorting.
#[derive(Debug, Clone, PartialEq)]
pub struct BruteMetrics {
    pub hr: f64,
    pub ndcg: f64,
    pub mu_under: Option<f64>,
    pub mu_over: Option<f64>,
    pub mu_lt: Option<f64>,
    pub counts: [u64; 3],
}

pub fn brute_rank(candidates: &[usize], scores: &[f64], k: usize) -> usize {
    let beats = |j: usize| scores[j] > scores[k] || (scores[j] == scores[k] && candidates[j] < candidates[k]);
    1 + (0..candidates.len()).filter(|&j| j != k && beats(j)).count()
}

pub fn brute_evaluate(cases: &[TestCase], score: impl Fn(usize, usize) -> f64, groups: &GroupAssignment, cutoff: usize) -> BruteMetrics {
    let (mut hits, mut gain) = (0.0, 0.0);
    let mut sums = [0u64; 3];
    let mut counts = [0u64; 3];
    for c in cases {
        let mut cands = vec![c.positive];
        cands.extend(&c.negatives);
        let scores: Vec<f64> = cands.iter().map(|&i| score(c.user, i)).collect();
        for k in 0..cands.len() {
            let rank = brute_rank(&cands, &scores, k) as u64;
            let item = cands[k];
            if k == 0 && rank as usize <= cutoff {
                hits += 1.0;
                gain += 1.0 / (rank as f64 + 1.0).log2();
            }
            let country = groups.item_country[item].as_deref();
            let member = [
                country.is_some_and(|x| groups.underrepresented.contains(x)),
                country.is_some_and(|x| groups.overrepresented.contains(x)),
                groups.long_tail_items.contains(&item),
            ];
            for g in 0..3 {
                if member[g] {
                    sums[g] += rank;
                    counts[g] += 1;
                }
            }
        }
    }
    let n = cases.len() as f64;
    let mu = |g: usize| (counts[g] > 0).then(|| sums[g] as f64 / counts[g] as f64);
    BruteMetrics { hr: hits / n, ndcg: gain / n, mu_under: mu(0), mu_over: mu(1), mu_lt: mu(2), counts }
}

/// The skewed two-tier dataset: high-tier countries keep their popularity,
/// low-tier countries have it scaled by `low_multiplier`.
pub fn two_tier_spec(n_users: usize, n_items: usize, draws: usize, n_high: usize, n_low: usize, low_multiplier: f64) -> SynthSpec {
    let mut countries = Vec::new();
    for c in 0..n_high {
        countries.push(CountrySpec { code: format!("H{c}"), item_share: 1.0, multiplier: 1.0 });
    }
    for c in 0..n_low {
        countries.push(CountrySpec { code: format!("L{c}"), item_share: 1.0, multiplier: low_multiplier });
    }
    SynthSpec { n_users, n_items, draws_per_user: draws, draws_per_user_max: None, gamma: 1.5, countries }
}

/// Small dataset for fast training checks.
pub fn small_spec(n_users: usize) -> SynthSpec {
    two_tier_spec(n_users, 60, 8, 2, 3, 0.3)
}

/// Prints one line of the acceptance summary.
pub fn report(id: &str, pass: bool, detail: &str) {
    println!("[{}] criterion {id}: {detail}", if pass { "PASS" } else { "FAIL" });
}

pub mod gradcheck;
