//! On-disk dataset bundle: a directory of versioned CSV files.
//!
//! ```text
//! users.csv   index,key
//! items.csv   index,key,country,long_tail
//! groups.csv  country,group
//! train.csv   user,item,timestamp
//! test.csv    user,positive,negatives      (negatives space-separated)
//! ```
//! Each file starts with a `# protofair-<kind> v1` line.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use super::load::first_line;
use super::{DataError, GroupAssignment, InteractionTable, SplitDataset, TestCase};

const VERSION: &str = "v1";

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub split: SplitDataset,
    pub groups: GroupAssignment,
}

fn header(kind: &str) -> String {
    format!("# protofair-{kind} {VERSION}\n")
}

fn write_csv(dir: &Path, name: &str, kind: &str, cols: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<(), DataError> {
    let path = dir.join(name);
    let mut w = csv::Writer::from_writer(header(kind).into_bytes());
    let err = |e: csv::Error| DataError::format(&path, e.to_string());
    w.write_record(cols).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| DataError::format(&path, e.to_string()))?;
    fs::write(&path, bytes).map_err(|e| DataError::io(&path, e))
}

fn read_csv(dir: &Path, name: &str, kind: &str) -> Result<Vec<csv::StringRecord>, DataError> {
    let path = dir.join(name);
    let first = first_line(&path)?;
    if first != header(kind).trim_end() {
        return Err(DataError::format(&path, format!("expected version line {:?}, found {first:?}", header(kind).trim_end())));
    }
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(&path).map_err(|e| DataError::format(&path, e.to_string()))?;
    r.records().collect::<Result<_, _>>().map_err(|e| DataError::format(&path, e.to_string()))
}

fn parse<T: std::str::FromStr>(path: &Path, s: &str) -> Result<T, DataError> {
    s.parse().map_err(|_| DataError::format(path, format!("bad value {s:?}")))
}

pub fn write_bundle(dir: &Path, bundle: &DatasetBundle) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    let train = &bundle.split.train;
    let g = &bundle.groups;
    write_csv(dir, "users.csv", "users", &["index", "key"], train.user_keys().iter().enumerate().map(|(i, k)| vec![i.to_string(), k.clone()]))?;
    write_csv(
        dir,
        "items.csv",
        "items",
        &["index", "key", "country", "long_tail"],
        train.item_keys().iter().enumerate().map(|(i, k)| {
            vec![i.to_string(), k.clone(), g.country_of(i).unwrap_or("").to_string(), u8::from(g.is_long_tail(i)).to_string()]
        }),
    )?;
    let groups = g
        .overrepresented
        .iter()
        .map(|c| vec![c.clone(), "over".into()])
        .chain(g.underrepresented.iter().map(|c| vec![c.clone(), "under".into()]));
    write_csv(dir, "groups.csv", "groups", &["country", "group"], groups)?;
    write_csv(
        dir,
        "train.csv",
        "train",
        &["user", "item", "timestamp"],
        train
            .pairs()
            .iter()
            .zip(train.timestamps())
            .map(|(&(u, i), ts)| vec![u.to_string(), i.to_string(), ts.map(|t| t.to_string()).unwrap_or_default()]),
    )?;
    write_csv(
        dir,
        "test.csv",
        "test",
        &["user", "positive", "negatives"],
        bundle.split.test.iter().map(|c| {
            let negs: Vec<String> = c.negatives.iter().map(usize::to_string).collect();
            vec![c.user.to_string(), c.positive.to_string(), negs.join(" ")]
        }),
    )
}

pub fn read_bundle(dir: &Path) -> Result<DatasetBundle, DataError> {
    let user_keys: Vec<String> = read_csv(dir, "users.csv", "users")?.iter().map(|r| r[1].to_string()).collect();
    let items = read_csv(dir, "items.csv", "items")?;
    let items_path = dir.join("items.csv");
    let mut item_keys = Vec::with_capacity(items.len());
    let mut item_country = Vec::with_capacity(items.len());
    let mut long_tail = BTreeSet::new();
    for (idx, r) in items.iter().enumerate() {
        item_keys.push(r[1].to_string());
        item_country.push(Some(r[2].to_string()).filter(|c| !c.is_empty()));
        if &r[3] == "1" {
            long_tail.insert(idx);
        }
    }

    let mut over = BTreeSet::new();
    let mut under = BTreeSet::new();
    for r in read_csv(dir, "groups.csv", "groups")? {
        match &r[1] {
            "over" => over.insert(r[0].to_string()),
            "under" => under.insert(r[0].to_string()),
            other => return Err(DataError::format(dir.join("groups.csv"), format!("unknown group {other:?}"))),
        };
    }

    let train_path = dir.join("train.csv");
    let mut pairs = Vec::new();
    for r in read_csv(dir, "train.csv", "train")? {
        let ts = if r[2].is_empty() { None } else { Some(parse::<i64>(&train_path, &r[2])?) };
        pairs.push((parse(&train_path, &r[0])?, parse(&train_path, &r[1])?, ts));
    }
    let train = InteractionTable::from_pairs(user_keys, item_keys, pairs)?;

    let test_path = dir.join("test.csv");
    let mut test = Vec::new();
    for r in read_csv(dir, "test.csv", "test")? {
        let negatives = r[2].split_whitespace().map(|s| parse(&test_path, s)).collect::<Result<Vec<usize>, _>>()?;
        test.push(TestCase { user: parse(&test_path, &r[0])?, positive: parse(&test_path, &r[1])?, negatives });
    }
    if item_country.len() != train.num_items() {
        return Err(DataError::format(items_path, "item count mismatch"));
    }
    Ok(DatasetBundle {
        split: SplitDataset { train, test },
        groups: GroupAssignment { item_country, overrepresented: over, underrepresented: under, long_tail_items: long_tail },
    })
}
