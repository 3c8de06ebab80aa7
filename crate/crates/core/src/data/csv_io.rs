use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::RawDataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A column selected by header name or zero-based index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Delimiter {
    #[default]
    Comma,
    Tab,
    Semicolon,
    /// Runs of spaces or tabs.
    Whitespace,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvOptions {
    pub label_column: ColumnRef,
    #[serde(default = "default_true")]
    pub has_header: bool,
    #[serde(default)]
    pub delimiter: Delimiter,
    /// Columns ignored entirely, e.g. row ids.
    #[serde(default)]
    pub drop_columns: Vec<ColumnRef>,
    /// Expected class count; ingestion fails if the file holds more classes.
    #[serde(default)]
    pub class_count: Option<usize>,
}

fn default_true() -> bool {
    true
}

impl CsvOptions {
    pub fn new(label_column: ColumnRef, has_header: bool) -> Self {
        Self {
            label_column,
            has_header,
            delimiter: Delimiter::Comma,
            drop_columns: Vec::new(),
            class_count: None,
        }
    }
}

pub fn load_csv<T: Scalar>(
    path: impl AsRef<Path>,
    label_column: ColumnRef,
    has_header: bool,
) -> Result<RawDataset<T>> {
    load_csv_with(path, &CsvOptions::new(label_column, has_header))
}

fn read_records(path: &Path, delimiter: Delimiter) -> Result<Vec<Vec<String>>> {
    if delimiter == Delimiter::Whitespace {
        let reader = BufReader::new(File::open(path)?);
        let mut rows = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            rows.push(line.split_whitespace().map(str::to_owned).collect());
        }
        return Ok(rows);
    }
    let byte = match delimiter {
        Delimiter::Comma => b',',
        Delimiter::Tab => b'\t',
        Delimiter::Semicolon => b';',
        Delimiter::Whitespace => unreachable!(),
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .delimiter(byte)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        rows.push(rec.iter().map(str::to_owned).collect());
    }
    Ok(rows)
}

fn resolve(col: &ColumnRef, header: Option<&[String]>, width: usize) -> Result<usize> {
    let idx = match col {
        ColumnRef::Index(i) => *i,
        ColumnRef::Name(name) => header
            .and_then(|h| h.iter().position(|c| c == name))
            .ok_or_else(|| Error::Config(format!("no column named `{name}`")))?,
    };
    if idx >= width {
        return Err(Error::Config(format!(
            "column {idx} out of range for {width} columns"
        )));
    }
    Ok(idx)
}

fn is_missing(cell: &str) -> bool {
    matches!(
        cell,
        "" | "?" | "NA" | "N/A" | "na" | "nan" | "NaN" | "null"
    )
}

/// Reads a delimited file into a dense feature matrix and integer labels.
///
/// Labels are mapped to `0..C` in ascending order of their raw values
/// (numeric order when every label parses as a number). Row order is kept.
/// Missing or non-numeric feature cells are rejected.
pub fn load_csv_with<T: Scalar>(
    path: impl AsRef<Path>,
    opts: &CsvOptions,
) -> Result<RawDataset<T>> {
    let mut rows = read_records(path.as_ref(), opts.delimiter)?;
    let header = if opts.has_header && !rows.is_empty() {
        Some(rows.remove(0))
    } else {
        None
    };
    let width = header
        .as_ref()
        .map(Vec::len)
        .or_else(|| rows.first().map(Vec::len))
        .unwrap_or(0);
    if rows.is_empty() {
        return Err(Error::Config("file holds no data rows".into()));
    }
    let label_idx = resolve(&opts.label_column, header.as_deref(), width)?;
    let mut dropped = vec![false; width];
    dropped[label_idx] = true;
    for d in &opts.drop_columns {
        dropped[resolve(d, header.as_deref(), width)?] = true;
    }
    let feature_cols: Vec<usize> = (0..width).filter(|&c| !dropped[c]).collect();
    let line_offset = if header.is_some() { 2 } else { 1 };

    let mut values = Vec::with_capacity(rows.len() * feature_cols.len());
    let mut raw_labels = Vec::with_capacity(rows.len());
    for (r, row) in rows.iter().enumerate() {
        let line = r + line_offset;
        if row.len() != width {
            return Err(Error::Parse {
                row: line,
                col: row.len().min(width) + 1,
                msg: format!("expected {width} fields, found {}", row.len()),
            });
        }
        for &c in &feature_cols {
            let cell = row[c].as_str();
            if is_missing(cell) {
                return Err(Error::Parse {
                    row: line,
                    col: c + 1,
                    msg: "missing value".into(),
                });
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row: line,
                col: c + 1,
                msg: format!("`{cell}` is not numeric"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row: line,
                    col: c + 1,
                    msg: "non-finite value".into(),
                });
            }
            values.push(T::of(v));
        }
        let label = row[label_idx].clone();
        if is_missing(&label) {
            return Err(Error::Parse {
                row: line,
                col: label_idx + 1,
                msg: "missing label".into(),
            });
        }
        raw_labels.push(label);
    }

    let (labels, class_count) = encode_labels(&raw_labels);
    if let Some(expected) = opts.class_count {
        if class_count > expected {
            return Err(Error::Config(format!(
                "found {class_count} classes, manifest says {expected}"
            )));
        }
    }
    let feature_names = feature_cols
        .iter()
        .map(|&c| {
            header
                .as_ref()
                .map(|h| h[c].clone())
                .unwrap_or_else(|| format!("f{c}"))
        })
        .collect();
    Ok(RawDataset {
        features: Array2::from_shape_vec((rows.len(), feature_cols.len()), values)
            .expect("sized above"),
        labels,
        class_count: opts.class_count.unwrap_or(class_count),
        feature_names,
        owners: None,
    })
}

fn encode_labels(raw: &[String]) -> (Vec<usize>, usize) {
    let numeric: Option<Vec<f64>> = raw.iter().map(|s| s.parse::<f64>().ok()).collect();
    match numeric {
        // labels like "1" and "1.0" share a value and therefore a class
        Some(nums) => {
            let mut distinct = nums.clone();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            let labels = nums
                .iter()
                .map(|v| {
                    distinct
                        .binary_search_by(|u| u.total_cmp(v))
                        .expect("value seen")
                })
                .collect();
            (labels, distinct.len())
        }
        None => {
            let mut distinct: Vec<&String> = raw.iter().collect();
            distinct.sort();
            distinct.dedup();
            let index: BTreeMap<&String, usize> =
                distinct.iter().enumerate().map(|(i, s)| (*s, i)).collect();
            (raw.iter().map(|s| index[s]).collect(), distinct.len())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn two_rows_round_trip() {
        let f = write_tmp("a,b,label\n1.5,-2,3\n0.25,1e3,1\n");
        let ds: RawDataset<f64> =
            load_csv(f.path(), ColumnRef::Name("label".into()), true).unwrap();
        assert_eq!(ds.features, ndarray::array![[1.5, -2.0], [0.25, 1000.0]]);
        assert_eq!(ds.labels, vec![1, 0]);
        assert_eq!(ds.class_count, 2);
        assert_eq!(ds.feature_names, vec!["a", "b"]);
    }

    #[test]
    fn numeric_labels_sort_numerically() {
        let f = write_tmp("1,10\n2,2\n3,1\n4,2\n");
        let ds: RawDataset<f64> = load_csv(f.path(), ColumnRef::Index(1), false).unwrap();
        assert_eq!(ds.labels, vec![2, 1, 0, 1]);
        assert_eq!(ds.class_count, 3);
    }

    #[test]
    fn whitespace_and_dropped_columns() {
        let f = write_tmp("id x y cls\n7 1 2 b\n8  3 4 a\n");
        let opts = CsvOptions {
            delimiter: Delimiter::Whitespace,
            drop_columns: vec![ColumnRef::Name("id".into())],
            ..CsvOptions::new(ColumnRef::Name("cls".into()), true)
        };
        let ds: RawDataset<f32> = load_csv_with(f.path(), &opts).unwrap();
        assert_eq!(ds.features, ndarray::array![[1.0f32, 2.0], [3.0, 4.0]]);
        assert_eq!(ds.labels, vec![1, 0]);
    }

    #[test]
    fn parse_errors_carry_position() {
        let f = write_tmp("a,b,y\n1,2,0\n3,oops,1\n");
        match load_csv::<f64>(f.path(), ColumnRef::Name("y".into()), true) {
            Err(Error::Parse { row, col, .. }) => assert_eq!((row, col), (3, 2)),
            other => panic!("expected parse error, got {other:?}"),
        }
        let f = write_tmp("a,b,y\n1,,0\n");
        assert!(matches!(
            load_csv::<f64>(f.path(), ColumnRef::Index(2), true),
            Err(Error::Parse { row: 2, col: 2, .. })
        ));
    }

    #[test]
    fn unknown_label_column() {
        let f = write_tmp("a,b\n1,2\n");
        assert!(matches!(
            load_csv::<f64>(f.path(), ColumnRef::Name("label".into()), true),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            load_csv::<f64>(f.path(), ColumnRef::Index(5), true),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn manifest_class_count() {
        let f = write_tmp("1,0\n2,1\n");
        let mut opts = CsvOptions::new(ColumnRef::Index(1), false);
        opts.class_count = Some(4);
        let ds: RawDataset<f64> = load_csv_with(f.path(), &opts).unwrap();
        assert_eq!(ds.class_count, 4);
        opts.class_count = Some(1);
        assert!(load_csv_with::<f64>(f.path(), &opts).is_err());
    }
}
