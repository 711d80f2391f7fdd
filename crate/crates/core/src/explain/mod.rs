//! Nearest-prototype explanations and 2-D projection exports.

mod pca;

pub use pca::{pca_2d, Projection};

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::GroupAssignment;
use crate::model::transform;
use crate::model::{ModelError, PrototypeModel};

pub const PROJECTION_HEADER: &str = "# protofair-projection v1";
pub const EXPLANATION_HEADER: &str = "# protofair-explanations v1";

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("requested {n} prototypes, model has {available}")]
    CountOutOfRange { n: usize, available: usize },
    #[error("{kind} index {index} out of range (size {len})")]
    IndexOutOfRange { kind: &'static str, index: usize, len: usize },
    #[error("projection needs embedding dimension >= 2, got {0}")]
    DimensionTooSmall(usize),
    #[error("nothing to project")]
    Empty,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0}")]
    Io(String),
}

fn sorted_desc(values: &[f64]) -> Vec<(usize, f64)> {
    let mut v: Vec<(usize, f64)> = values.iter().copied().enumerate().collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    v
}

/// The `n` item prototypes most similar to an item, best first.
pub fn nearest_prototypes(model: &PrototypeModel, item: usize, n: usize) -> Result<Vec<(usize, f64)>, ExplainError> {
    let available = model.item_protos.rows();
    if n == 0 || n > available {
        return Err(ExplainError::CountOutOfRange { n, available });
    }
    if item >= model.item_emb.rows() {
        return Err(ExplainError::IndexOutOfRange { kind: "item", index: item, len: model.item_emb.rows() });
    }
    let t = transform(model.item_emb.row(item), &model.item_protos)?;
    let mut v = sorted_desc(&t.values);
    v.truncate(n);
    Ok(v)
}

/// The `m` items closest to an item prototype, skipping `exclude`.
pub fn prototype_exemplars(
    model: &PrototypeModel,
    prototype: usize,
    m: usize,
    exclude: &BTreeSet<usize>,
) -> Result<Vec<(usize, f64)>, ExplainError> {
    if prototype >= model.item_protos.rows() {
        return Err(ExplainError::IndexOutOfRange { kind: "prototype", index: prototype, len: model.item_protos.rows() });
    }
    // Similarity of every item to this one prototype is the transform of the
    // prototype against the item matrix.
    let t = transform(model.item_protos.row(prototype), &model.item_emb)?;
    Ok(sorted_desc(&t.values).into_iter().filter(|(i, _)| !exclude.contains(i)).take(m).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRef {
    pub index: usize,
    pub label: Option<String>,
    pub country: Option<String>,
}

impl ItemRef {
    fn display(&self) -> String {
        match &self.label {
            Some(l) => l.clone(),
            None => format!("#{}", self.index),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub item: ItemRef,
    pub similarity: f64,
    /// Shares the explained item's country.
    pub same_country: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeEntry {
    pub prototype: usize,
    pub similarity: f64,
    pub exemplars: Vec<Exemplar>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub target: ItemRef,
    pub prototypes: Vec<PrototypeEntry>,
}

impl Explanation {
    /// Fraction of exemplars from the target's country; None without exemplars.
    pub fn same_country_fraction(&self) -> Option<f64> {
        let all: Vec<&Exemplar> = self.prototypes.iter().flat_map(|p| &p.exemplars).collect();
        (!all.is_empty()).then(|| all.iter().filter(|e| e.same_country).count() as f64 / all.len() as f64)
    }
}

/// Item keys, labels and countries used to annotate explanations.
#[derive(Debug, Clone, Copy)]
pub struct ItemInfo<'a> {
    pub keys: &'a [String],
    pub labels: &'a BTreeMap<String, String>,
    pub groups: &'a GroupAssignment,
}

impl ItemInfo<'_> {
    fn item_ref(&self, index: usize) -> ItemRef {
        let label = self.keys.get(index).and_then(|k| self.labels.get(k)).cloned();
        if label.is_none() && !self.labels.is_empty() {
            log::warn!("no label for item {index}; showing its index");
        }
        ItemRef { index, label, country: self.groups.country_of(index).map(str::to_string) }
    }
}

/// Nearest prototypes of an item with their closest items. The explained
/// item itself is never its own exemplar.
pub fn explain_item(
    model: &PrototypeModel,
    item: usize,
    n_protos: usize,
    m_exemplars: usize,
    info: ItemInfo<'_>,
) -> Result<Explanation, ExplainError> {
    let target = info.item_ref(item);
    let exclude = BTreeSet::from([item]);
    let mut prototypes = Vec::with_capacity(n_protos);
    for (p, sim) in nearest_prototypes(model, item, n_protos)? {
        let exemplars = prototype_exemplars(model, p, m_exemplars, &exclude)?
            .into_iter()
            .map(|(i, s)| {
                let r = info.item_ref(i);
                let same_country = r.country.is_some() && r.country == target.country;
                Exemplar { item: r, similarity: s, same_country }
            })
            .collect();
        prototypes.push(PrototypeEntry { prototype: p, similarity: sim, exemplars });
    }
    Ok(Explanation { target, prototypes })
}

/// One row per explained item, one column per nearest prototype. Exemplars
/// from the item's own country carry a `*`.
pub fn render_table(explanations: &[Explanation]) -> String {
    let n_cols = explanations.iter().map(|e| e.prototypes.len()).max().unwrap_or(0);
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut header = vec!["item".to_string(), "country".to_string()];
    header.extend((1..=n_cols).map(|c| format!("prototype {c}")));
    rows.push(header);
    for e in explanations {
        let mut row = vec![e.target.display(), e.target.country.clone().unwrap_or_else(|| "-".into())];
        for p in &e.prototypes {
            let cell: Vec<String> = p
                .exemplars
                .iter()
                .map(|x| format!("{} ({:.2}){}", x.item.display(), x.similarity, if x.same_country { "*" } else { "" }))
                .collect();
            row.push(format!("P{} [{:.2}]: {}", p.prototype, p.similarity, cell.join("; ")));
        }
        rows.push(row);
    }
    let widths: Vec<usize> = (0..n_cols + 2)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in &rows {
        let cells: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, s)| format!("{s}{}", " ".repeat(widths[c] - s.chars().count())))
            .collect();
        out.push_str(cells.join(" | ").trim_end());
        out.push('\n');
    }
    out
}

/// Which rows go into a projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionSet {
    Items,
    Prototypes,
    #[default]
    Both,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedRow {
    pub id: String,
    pub kind: &'static str,
    pub country: String,
    pub x: f64,
    pub y: f64,
}

/// 2-D PCA of item embeddings and/or item prototypes, fitted jointly.
pub fn project_embeddings(
    model: &PrototypeModel,
    which: ProjectionSet,
    item_keys: &[String],
    groups: &GroupAssignment,
) -> Result<Vec<ProjectedRow>, ExplainError> {
    let d = model.item_emb.cols();
    if d < 2 {
        return Err(ExplainError::DimensionTooSmall(d));
    }
    let mut meta: Vec<(String, &'static str, String)> = Vec::new();
    let mut data: Vec<f64> = Vec::new();
    if which != ProjectionSet::Prototypes {
        for (i, row) in model.item_emb.iter_rows().enumerate() {
            let id = item_keys.get(i).cloned().unwrap_or_else(|| format!("i{i}"));
            meta.push((id, "item", groups.country_of(i).unwrap_or("").to_string()));
            data.extend_from_slice(row);
        }
    }
    if which != ProjectionSet::Items {
        for (p, row) in model.item_protos.iter_rows().enumerate() {
            meta.push((format!("p{p}"), "prototype", String::new()));
            data.extend_from_slice(row);
        }
    }
    if meta.is_empty() {
        return Err(ExplainError::Empty);
    }
    let proj = pca_2d(&crate::matrix::Matrix::from_vec(meta.len(), d, data))?;
    Ok(meta
        .into_iter()
        .zip(proj.coords)
        .map(|((id, kind, country), [x, y])| ProjectedRow { id, kind, country, x, y })
        .collect())
}

pub fn write_projection(rows: &[ProjectedRow], path: &Path) -> Result<(), ExplainError> {
    let err = |e: &dyn std::fmt::Display| ExplainError::Io(format!("{}: {e}", path.display()));
    let mut buf = format!("{PROJECTION_HEADER}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(["id", "kind", "country", "x", "y"]).map_err(|e| err(&e))?;
        for r in rows {
            w.write_record([r.id.as_str(), r.kind, r.country.as_str(), &r.x.to_string(), &r.y.to_string()])
                .map_err(|e| err(&e))?;
        }
        w.flush().map_err(|e| err(&e))?;
    }
    std::fs::write(path, buf).map_err(|e| err(&e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use crate::model::{Dims, Filtering, ModelKind};
    use crate::seed::rng_for;

    fn model(n_items: usize, dim: usize, protos: usize, seed: u64) -> PrototypeModel {
        let dims = Dims { n_users: 3, n_items, dim, user_protos: 2, item_protos: protos };
        PrototypeModel::random(ModelKind::Protomf, dims, 2, protos, Filtering::OFF, &mut rng_for(seed, "t")).unwrap()
    }

    fn groups(countries: &[&str]) -> GroupAssignment {
        GroupAssignment {
            item_country: countries.iter().map(|c| Some(c.to_string())).collect(),
            ..Default::default()
        }
    }

    #[test]
    fn nearest_with_all_prototypes_is_sorted_transform() {
        let m = model(5, 4, 6, 1);
        let got = nearest_prototypes(&m, 2, 6).unwrap();
        let t = transform(m.item_emb.row(2), &m.item_protos).unwrap();
        assert_eq!(got.len(), 6);
        assert!(got.windows(2).all(|w| w[0].1 >= w[1].1));
        for (p, s) in got {
            assert_eq!(s, t.values[p]);
        }
        assert!(nearest_prototypes(&m, 2, 0).is_err());
        assert!(nearest_prototypes(&m, 2, 7).is_err());
    }

    #[test]
    fn coinciding_prototype_comes_first_at_two() {
        let mut m = model(5, 4, 3, 2);
        let e = m.item_emb.row(1).to_vec();
        m.item_protos.row_mut(2).copy_from_slice(&e);
        let got = nearest_prototypes(&m, 1, 1).unwrap();
        assert_eq!(got[0].0, 2);
        assert!((got[0].1 - 2.0).abs() < 1e-12);
        let ex = prototype_exemplars(&m, 2, 1, &BTreeSet::new()).unwrap();
        assert_eq!(ex[0].0, 1);
        assert!((ex[0].1 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn exemplars_exclusion_and_range() {
        let m = model(4, 3, 2, 3);
        let all: BTreeSet<usize> = (0..4).collect();
        assert!(prototype_exemplars(&m, 0, 3, &all).unwrap().is_empty());
        assert!(prototype_exemplars(&m, 2, 1, &BTreeSet::new()).is_err());
        let ex = prototype_exemplars(&m, 1, 4, &BTreeSet::new()).unwrap();
        assert!(ex.windows(2).all(|w| w[0].1 >= w[1].1));
        assert!(ex.iter().all(|(_, s)| (0.0..=2.0).contains(s)));
    }

    #[test]
    fn explanation_marks_same_country() {
        let mut m = model(3, 2, 1, 4);
        m.item_emb = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.1], vec![-1.0, 0.0]]);
        m.item_protos = Matrix::from_rows(&[vec![1.0, 0.05]]);
        let keys: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let labels = BTreeMap::from([("a".to_string(), "Alpha".to_string()), ("b".to_string(), "Beta".to_string())]);
        let g = groups(&["JP", "JP", "US"]);
        let info = ItemInfo { keys: &keys, labels: &labels, groups: &g };
        let e = explain_item(&m, 0, 1, 2, info).unwrap();
        assert_eq!(e.target.label.as_deref(), Some("Alpha"));
        let ex = &e.prototypes[0].exemplars;
        assert_eq!(ex[0].item.index, 1);
        assert!(ex[0].same_country);
        assert!(!ex[1].same_country);
        assert_eq!(ex[1].item.label, None);
        assert_eq!(e.same_country_fraction(), Some(0.5));
        let table = render_table(&[e]);
        assert!(table.contains("Beta (2.00)*"), "{table}");
        assert!(table.contains("#2 (0.00)"), "{table}");
    }

    #[test]
    fn projection_rows_and_kinds() {
        let m = model(4, 3, 2, 5);
        let keys: Vec<String> = (0..4).map(|i| format!("k{i}")).collect();
        let g = groups(&["A", "B", "A", "C"]);
        let rows = project_embeddings(&m, ProjectionSet::Both, &keys, &g).unwrap();
        assert_eq!(rows.len(), 6);
        assert_eq!(rows.iter().filter(|r| r.kind == "prototype").count(), 2);
        assert_eq!(rows[1].country, "B");
        let m1 = model(4, 1, 2, 5);
        assert!(matches!(project_embeddings(&m1, ProjectionSet::Items, &keys, &g), Err(ExplainError::DimensionTooSmall(1))));
    }
}
