//! Run configuration: one TOML file with a section per command.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::data::{Delimiter, SynthSpec};
use crate::explain::ProjectionSet;
use crate::training::TrainConfig;

fn d_out_dir() -> PathBuf {
    PathBuf::from("out")
}
fn d_one() -> usize {
    1
}
fn d_bad_rows() -> usize {
    100
}
fn d_negatives() -> usize {
    99
}
fn d_n_protos() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; every stage derives its own stream from it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub train: TrainConfig,
    /// Named overrides of `train`, one model each.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub variant: Vec<Table>,
    /// Lists of values per `train` key; every variant is crossed with their product.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub grid: BTreeMap<String, Vec<Value>>,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub explain: ExplainSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub interactions: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    #[serde(default)]
    pub delimiter: Delimiter,
    #[serde(default = "d_one")]
    pub min_user: usize,
    #[serde(default = "d_one")]
    pub min_item: usize,
    #[serde(default)]
    pub require_country: bool,
    #[serde(default = "d_bad_rows")]
    pub max_bad_rows: usize,
    /// Minimum fraction of input items with a country.
    #[serde(default)]
    pub min_country_coverage: f64,
    /// Explicit group lists; when both are empty the quantile rule is used.
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub overrepresented: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub underrepresented: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    #[serde(default = "d_negatives")]
    pub test_negatives: usize,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection { test_negatives: d_negatives() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Also write the per-user detail table.
    #[serde(default)]
    pub detail: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ItemSelection {
    Keys(Vec<String>),
    /// The string `auto-sample`.
    Auto(String),
}

impl Default for ItemSelection {
    fn default() -> Self {
        ItemSelection::Auto(AUTO_SAMPLE.into())
    }
}

pub const AUTO_SAMPLE: &str = "auto-sample";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplainSection {
    #[serde(default)]
    pub items: ItemSelection,
    #[serde(default = "d_n_protos")]
    pub n_protos: usize,
    #[serde(default = "d_one")]
    pub m_exemplars: usize,
    #[serde(default)]
    pub projection: ProjectionSet,
    /// Variant to explain; defaults to the first.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
}

impl Default for ExplainSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults deserialize")
    }
}

/// A fully resolved training run.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: String,
    pub config: TrainConfig,
}

fn set_path(root: &mut Table, path: &str, value: Value) -> Result<(), String> {
    let mut parts: Vec<&str> = path.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| format!("empty key in {path:?}"))?;
    let mut cur = root;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| format!("{path}: {p} is not a table"))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Parses the right-hand side of `--set key=value` as a TOML value, falling
/// back to a bare string.
fn parse_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

impl RunConfig {
    /// Parses config text and applies `key=value` overrides on dotted paths.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self, String> {
        let mut table: Table = toml::from_str(text).map_err(|e| e.to_string())?;
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| format!("override {o:?} is not key=value"))?;
            set_path(&mut table, k.trim(), parse_value(v.trim()))?;
        }
        let cfg: RunConfig = Value::Table(table).try_into().map_err(|e: toml::de::Error| e.to_string())?;
        cfg.variants()?;
        Ok(cfg)
    }

    /// The configuration with defaults filled in, as TOML.
    pub fn effective_toml(&self) -> String {
        let mut c = self.clone();
        c.train.seed = self.seed;
        toml::to_string(&c).expect("config serializes")
    }

    /// Training runs: every variant (or the bare base config) crossed with
    /// the grid, all sharing the root seed.
    pub fn variants(&self) -> Result<Vec<Variant>, String> {
        let mut base = Table::try_from(&self.train).map_err(|e| e.to_string())?;
        base.insert("seed".into(), Value::Integer(self.seed as i64));
        let mut named: Vec<(String, Table)> = Vec::new();
        if self.variant.is_empty() {
            named.push(("default".into(), Table::new()));
        }
        for v in &self.variant {
            let mut v = v.clone();
            let name = match v.remove("name") {
                Some(Value::String(s)) if !s.is_empty() => s,
                _ => return Err("every [[variant]] needs a non-empty string `name`".into()),
            };
            named.push((name, v));
        }

        let mut combos: Vec<Vec<(&String, &Value)>> = vec![Vec::new()];
        for (key, values) in &self.grid {
            if values.is_empty() {
                return Err(format!("grid key {key} has no values"));
            }
            combos = combos
                .into_iter()
                .flat_map(|c| values.iter().map(move |v| [c.clone(), vec![(key, v)]].concat()))
                .collect();
        }

        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        for (name, over) in &named {
            for combo in &combos {
                let mut t = base.clone();
                t.extend(over.clone());
                let mut full = name.clone();
                for (k, v) in combo {
                    t.insert((*k).clone(), (*v).clone());
                    full.push_str(&format!("-{k}={v}"));
                }
                let config: TrainConfig = Value::Table(t).try_into().map_err(|e: toml::de::Error| format!("variant {name}: {e}"))?;
                config.validate().map_err(|e| format!("variant {name}: {e}"))?;
                if !seen.insert(full.clone()) {
                    return Err(format!("duplicate variant name {full}"));
                }
                out.push(Variant { name: full, config });
            }
        }
        Ok(out)
    }
}
