//! Leave-one-out ranking metrics: utility and group exposure.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{GroupAssignment, ItemGroup, TestCase};
use crate::model::{Filtering, ModelError, PrototypeModel};

pub const CUTOFF: usize = 10;
pub const REPORT_HEADER: &str = "# protofair-report v1";
pub const PER_USER_HEADER: &str = "# protofair-per-user v1";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("user {user}: candidate item {item} appears more than once")]
    DuplicateCandidate { user: usize, item: usize },
    #[error("user {user}: {len} scores for {expected} candidates")]
    ScoreCount { user: usize, len: usize, expected: usize },
    #[error("no test users to evaluate")]
    Empty,
    #[error("index spaces differ: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("report io: {0}")]
    Io(String),
}

/// Candidates of one test user in rank order.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub user: usize,
    /// Item indices, best first.
    pub candidates: Vec<usize>,
    /// 1-based rank of the held-out item.
    pub positive_rank: usize,
}

impl RankedList {
    /// Sorts `candidates` by descending score, lower item index first on ties.
    pub fn from_scores(user: usize, positive: usize, candidates: &[usize], scores: &[f64]) -> Result<Self, EvalError> {
        if scores.len() != candidates.len() {
            return Err(EvalError::ScoreCount { user, len: scores.len(), expected: candidates.len() });
        }
        let mut seen = BTreeSet::new();
        for &c in candidates {
            if !seen.insert(c) {
                return Err(EvalError::DuplicateCandidate { user, item: c });
            }
        }
        let mut order: Vec<usize> = (0..candidates.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(candidates[a].cmp(&candidates[b])));
        let ranked: Vec<usize> = order.iter().map(|&k| candidates[k]).collect();
        let positive_rank = ranked.iter().position(|&c| c == positive).map(|p| p + 1).ok_or_else(|| {
            EvalError::Mismatch(format!("positive {positive} of user {user} missing from candidates"))
        })?;
        Ok(RankedList { user, candidates: ranked, positive_rank })
    }

    /// Ranks (1-based) of the candidates accepted by `member`.
    pub fn ranks_where<'a>(&'a self, mut member: impl FnMut(usize) -> bool + 'a) -> impl Iterator<Item = usize> + 'a {
        self.candidates.iter().enumerate().filter(move |(_, &c)| member(c)).map(|(p, _)| p + 1)
    }
}

/// Scores the positive and the case's negatives and ranks them.
pub fn rank_candidates(model: &PrototypeModel, case: &TestCase, filtering: Filtering) -> Result<RankedList, EvalError> {
    let candidates = case.candidates();
    let scores = model.score_items(case.user, &candidates, filtering)?;
    RankedList::from_scores(case.user, case.positive, &candidates, &scores)
}

fn dcg(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

/// HR@10 and NDCG@10 with one relevant item per list.
pub fn utility_metrics(lists: &[RankedList]) -> (f64, f64) {
    if lists.is_empty() {
        return (0.0, 0.0);
    }
    let n = lists.len() as f64;
    let hits = lists.iter().filter(|l| l.positive_rank <= CUTOFF).count() as f64;
    let gain: f64 = lists.iter().filter(|l| l.positive_rank <= CUTOFF).map(|l| dcg(l.positive_rank)).sum();
    (hits / n, gain / n)
}

/// Mean rank over every occurrence of a group member, with its count.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RankAverage {
    pub sum: u64,
    pub count: u64,
}

impl RankAverage {
    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum as f64 / self.count as f64)
    }

    fn add(&mut self, rank: usize) {
        self.sum += rank as u64;
        self.count += 1;
    }
}

/// Occurrence-averaged ranks of under- and overrepresented items.
pub fn group_rank_metrics(lists: &[RankedList], groups: &GroupAssignment) -> (RankAverage, RankAverage) {
    let (mut under, mut over) = (RankAverage::default(), RankAverage::default());
    for l in lists {
        for (p, &c) in l.candidates.iter().enumerate() {
            match groups.group_of(c) {
                Some(ItemGroup::Under) => under.add(p + 1),
                Some(ItemGroup::Over) => over.add(p + 1),
                None => {}
            }
        }
    }
    (under, over)
}

/// Occurrence-averaged rank of long-tail items.
pub fn long_tail_metric(lists: &[RankedList], groups: &GroupAssignment) -> RankAverage {
    let mut lt = RankAverage::default();
    for l in lists {
        for r in l.ranks_where(|c| groups.is_long_tail(c)) {
            lt.add(r);
        }
    }
    lt
}

/// Per-user detail row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UserSummary {
    pub user: usize,
    pub positive_rank: usize,
    pub n_under_cands: usize,
    pub n_over_cands: usize,
    pub n_lt_cands: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub n_users: usize,
    pub hr_at_10: f64,
    pub ndcg_at_10: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mu_under: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mu_over: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mu_long_tail: Option<f64>,
    pub n_under_occurrences: u64,
    pub n_over_occurrences: u64,
    pub n_long_tail_occurrences: u64,
    pub config_hash: String,
    #[serde(skip)]
    pub per_user: Vec<UserSummary>,
}

pub fn config_hash(config_text: &str) -> String {
    hex::encode(Sha256::digest(config_text.as_bytes()))
}

/// Aggregates already ranked lists into a report.
pub fn report_from_lists(lists: &[RankedList], groups: &GroupAssignment, config_text: &str) -> Result<EvalReport, EvalError> {
    if lists.is_empty() {
        return Err(EvalError::Empty);
    }
    let (hr, ndcg) = utility_metrics(lists);
    let (under, over) = group_rank_metrics(lists, groups);
    let lt = long_tail_metric(lists, groups);
    let per_user = lists
        .iter()
        .map(|l| UserSummary {
            user: l.user,
            positive_rank: l.positive_rank,
            n_under_cands: l.ranks_where(|c| groups.group_of(c) == Some(ItemGroup::Under)).count(),
            n_over_cands: l.ranks_where(|c| groups.group_of(c) == Some(ItemGroup::Over)).count(),
            n_lt_cands: l.ranks_where(|c| groups.is_long_tail(c)).count(),
        })
        .collect();
    Ok(EvalReport {
        n_users: lists.len(),
        hr_at_10: hr,
        ndcg_at_10: ndcg,
        mu_under: under.mean(),
        mu_over: over.mean(),
        mu_long_tail: lt.mean(),
        n_under_occurrences: under.count,
        n_over_occurrences: over.count,
        n_long_tail_occurrences: lt.count,
        config_hash: config_hash(config_text),
        per_user,
    })
}

fn check_spaces(model: &PrototypeModel, cases: &[TestCase], groups: &GroupAssignment) -> Result<(), EvalError> {
    let d = model.dims();
    if groups.num_items() != d.n_items {
        return Err(EvalError::Mismatch(format!("model has {} items, group assignment {}", d.n_items, groups.num_items())));
    }
    for c in cases {
        if c.user >= d.n_users {
            return Err(EvalError::Mismatch(format!("test user {} but model has {} users", c.user, d.n_users)));
        }
        if let Some(&i) = c.candidates().iter().find(|&&i| i >= d.n_items) {
            return Err(EvalError::Mismatch(format!("test item {i} but model has {} items", d.n_items)));
        }
    }
    Ok(())
}

/// Ranks every test case in parallel (order-preserving) and aggregates sequentially.
pub fn rank_all(model: &PrototypeModel, cases: &[TestCase], filtering: Filtering) -> Result<Vec<RankedList>, EvalError> {
    cases.par_iter().map(|c| rank_candidates(model, c, filtering)).collect()
}

pub fn evaluate(
    model: &PrototypeModel,
    cases: &[TestCase],
    groups: &GroupAssignment,
    filtering: Filtering,
    config_text: &str,
) -> Result<EvalReport, EvalError> {
    check_spaces(model, cases, groups)?;
    let lists = rank_all(model, cases, filtering)?;
    report_from_lists(&lists, groups, config_text)
}

/// HR@10 alone, for model selection on a validation split.
pub fn hit_rate(model: &PrototypeModel, cases: &[TestCase], filtering: Filtering) -> Result<f64, EvalError> {
    Ok(utility_metrics(&rank_all(model, cases, filtering)?).0)
}

impl EvalReport {
    pub fn write(&self, path: &Path) -> Result<(), EvalError> {
        let body = toml::to_string(self).map_err(|e| EvalError::Io(e.to_string()))?;
        fs::write(path, format!("{REPORT_HEADER}\n{body}")).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))
    }

    pub fn read(path: &Path) -> Result<Self, EvalError> {
        let text = fs::read_to_string(path).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
        let body = text
            .strip_prefix(REPORT_HEADER)
            .ok_or_else(|| EvalError::Io(format!("{}: missing header {REPORT_HEADER:?}", path.display())))?;
        toml::from_str(body).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))
    }

    pub fn write_per_user(&self, path: &Path) -> Result<(), EvalError> {
        let io = |e: std::io::Error| EvalError::Io(format!("{}: {e}", path.display()));
        let mut f = fs::File::create(path).map_err(io)?;
        writeln!(f, "{PER_USER_HEADER}").map_err(io)?;
        writeln!(f, "user,positive_rank,n_under_cands,n_over_cands,n_lt_cands").map_err(io)?;
        for u in &self.per_user {
            writeln!(f, "{},{},{},{},{}", u.user, u.positive_rank, u.n_under_cands, u.n_over_cands, u.n_lt_cands).map_err(io)?;
        }
        Ok(())
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"))
}

/// Cross-variant comparison table.
pub fn comparison_table(rows: &[(String, EvalReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(7);
    let mut out = format!("{:<width$}  {:>8}  {:>8}  {:>8}  {:>8}  {:>8}\n", "variant", "HR@10", "NDCG@10", "mu_under", "mu_over", "mu_LT");
    for (name, r) in rows {
        out.push_str(&format!(
            "{:<width$}  {:>8.3}  {:>8.3}  {:>8}  {:>8}  {:>8}\n",
            name,
            r.hr_at_10,
            r.ndcg_at_10,
            fmt_opt(r.mu_under),
            fmt_opt(r.mu_over),
            fmt_opt(r.mu_long_tail)
        ));
    }
    out
}
