//! Delimiter-separated loaders for interactions, item metadata and labels.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{DataError, RawInteraction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Delimiter {
    /// Tab if the header line contains one, comma otherwise.
    #[default]
    Auto,
    Comma,
    Tab,
}

impl Delimiter {
    fn resolve(self, header_line: &str) -> u8 {
        match self {
            Delimiter::Comma => b',',
            Delimiter::Tab => b'\t',
            Delimiter::Auto if header_line.contains('\t') => b'\t',
            Delimiter::Auto => b',',
        }
    }
}

impl FromStr for Delimiter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "auto" => Ok(Delimiter::Auto),
            "comma" | "," => Ok(Delimiter::Comma),
            "tab" | "\\t" | "\t" => Ok(Delimiter::Tab),
            other => Err(format!("unknown delimiter {other:?} (expected auto, comma or tab)")),
        }
    }
}

/// A row that could not be parsed. `line` is 1-based and counts the header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowError {
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct LoadedInteractions {
    pub rows: Vec<RawInteraction>,
    pub errors: Vec<RowError>,
}

fn open_text(path: &Path) -> Result<String, DataError> {
    let mut s = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut s))
        .map_err(|e| DataError::io(path, e))?;
    Ok(s)
}

fn reader_for(text: &str, delimiter: Delimiter) -> csv::Reader<&[u8]> {
    let first = text.lines().next().unwrap_or("");
    csv::ReaderBuilder::new()
        .delimiter(delimiter.resolve(first))
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
}

fn column_index(header: &csv::StringRecord, name: &str) -> Option<usize> {
    header.iter().position(|h| h.eq_ignore_ascii_case(name))
}

/// Reads an interactions file with header `user,item[,weight][,timestamp]`.
///
/// Malformed rows are collected with their line numbers and skipped; if
/// more than `max_bad_rows` are found the whole load fails.
pub fn load_interactions(path: &Path, delimiter: Delimiter, max_bad_rows: usize) -> Result<LoadedInteractions, DataError> {
    let text = open_text(path)?;
    let mut reader = reader_for(&text, delimiter);
    let mut records = reader.records();

    let header = match records.next() {
        Some(Ok(h)) => h,
        Some(Err(e)) => return Err(DataError::format(path, format!("unreadable header: {e}"))),
        None => return Err(DataError::format(path, "missing header row")),
    };
    let (Some(user_col), Some(item_col)) = (column_index(&header, "user"), column_index(&header, "item")) else {
        return Err(DataError::format(path, "header must name `user` and `item` columns"));
    };
    for name in header.iter() {
        if !["user", "item", "weight", "timestamp"].iter().any(|k| name.eq_ignore_ascii_case(k)) {
            return Err(DataError::format(path, format!("unknown header column {name:?}")));
        }
    }
    let weight_col = column_index(&header, "weight");
    let ts_col = column_index(&header, "timestamp");

    let mut out = LoadedInteractions::default();
    for rec in records {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                out.errors.push(RowError { line, message: e.to_string() });
                continue;
            }
        };
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        match parse_row(&rec, user_col, item_col, weight_col, ts_col) {
            Ok(row) => out.rows.push(row),
            Err(message) => out.errors.push(RowError { line, message }),
        }
    }

    if out.errors.len() > max_bad_rows {
        let first = &out.errors[0];
        return Err(DataError::TooManyBadRows {
            path: path.to_path_buf(),
            count: out.errors.len(),
            allowed: max_bad_rows,
            first_line: first.line,
            first_message: first.message.clone(),
        });
    }
    for e in &out.errors {
        log::warn!("{}:{}: skipped row: {}", path.display(), e.line, e.message);
    }
    Ok(out)
}

fn parse_row(
    rec: &csv::StringRecord,
    user_col: usize,
    item_col: usize,
    weight_col: Option<usize>,
    ts_col: Option<usize>,
) -> Result<RawInteraction, String> {
    let field = |i: usize, name: &str| rec.get(i).ok_or_else(|| format!("missing `{name}` column ({} fields)", rec.len()));
    let user_key = field(user_col, "user")?;
    let item_key = field(item_col, "item")?;
    if user_key.is_empty() || item_key.is_empty() {
        return Err("empty user or item key".into());
    }
    let weight = match weight_col.and_then(|i| rec.get(i)).filter(|s| !s.is_empty()) {
        None => 1,
        Some(s) => parse_weight(s)?,
    };
    let timestamp = match ts_col.and_then(|i| rec.get(i)).filter(|s| !s.is_empty()) {
        None => None,
        Some(s) => Some(s.parse::<i64>().map_err(|_| format!("bad timestamp {s:?}"))?),
    };
    Ok(RawInteraction { user_key: user_key.to_string(), item_key: item_key.to_string(), weight, timestamp })
}

fn parse_weight(s: &str) -> Result<u64, String> {
    let w = match s.parse::<u64>() {
        Ok(w) => w,
        Err(_) => match s.parse::<f64>() {
            Ok(f) if f.is_finite() && f >= 0.0 && f.fract() == 0.0 => f as u64,
            _ => return Err(format!("bad weight {s:?}")),
        },
    };
    if w < 1 {
        return Err(format!("weight must be >= 1, got {w}"));
    }
    Ok(w)
}

fn load_key_value(path: &Path, key: &str, value: &str) -> Result<Vec<(String, String)>, DataError> {
    let text = open_text(path)?;
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut reader = reader_for(&text, Delimiter::Auto);
    let mut records = reader.records();
    let header = match records.next() {
        Some(Ok(h)) => h,
        _ => return Err(DataError::format(path, "missing header row")),
    };
    let (Some(kc), Some(vc)) = (column_index(&header, key), column_index(&header, value)) else {
        return Err(DataError::format(path, format!("header must be `{key},{value}`")));
    };
    let mut out = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| DataError::format(path, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        match (rec.get(kc), rec.get(vc)) {
            (Some(k), Some(v)) if !k.is_empty() => out.push((k.to_string(), v.to_string())),
            (Some(""), None) => {}
            _ => return Err(DataError::format(path, format!("line {line}: expected `{key},{value}`"))),
        }
    }
    Ok(out)
}

/// Reads `item,country`. Codes are uppercased; the last row for a key wins.
/// Rows with an empty country are ignored.
pub fn load_item_metadata(path: &Path) -> Result<BTreeMap<String, String>, DataError> {
    Ok(load_key_value(path, "item", "country")?
        .into_iter()
        .filter(|(_, c)| !c.is_empty())
        .map(|(k, c)| (k, c.to_uppercase()))
        .collect())
}

/// Reads the optional `item,label` sidecar.
pub fn load_labels(path: &Path) -> Result<BTreeMap<String, String>, DataError> {
    Ok(load_key_value(path, "item", "label")?.into_iter().collect())
}

/// Reads the first line of a file, used by readers that check a version header.
pub(crate) fn first_line(path: &Path) -> Result<String, DataError> {
    let f = File::open(path).map_err(|e| DataError::io(path, e))?;
    let mut line = String::new();
    BufReader::new(f).read_line(&mut line).map_err(|e| DataError::io(path, e))?;
    Ok(line.trim_end().to_string())
}
