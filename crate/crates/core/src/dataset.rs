//! Tabular datasets and CSV ingestion.

use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::drift::FeatureValues;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("empty file: no header row")]
    Empty,
    #[error("ragged row at line {line}: expected {expected} fields, found {found}")]
    Ragged { line: u64, expected: u64, found: u64 },
    #[error("csv error: {0}")]
    Csv(String),
    #[error("duplicate column `{0}`")]
    DuplicateColumn(String),
    #[error("column `{name}` has {found} rows, expected {expected}")]
    LengthMismatch {
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("cannot combine datasets with different columns")]
    IncompatibleColumns,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

impl std::fmt::Display for ColumnKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ColumnKind::Numeric => "numeric",
            ColumnKind::Categorical => "categorical",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Numeric(Vec<Option<f64>>),
    Categorical(Vec<Option<String>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub data: ColumnData,
}

impl Column {
    pub fn numeric(name: impl Into<String>, values: Vec<f64>) -> Self {
        Column {
            name: name.into(),
            data: ColumnData::Numeric(values.into_iter().map(Some).collect()),
        }
    }

    pub fn categorical<S: Into<String>>(name: impl Into<String>, values: impl IntoIterator<Item = S>) -> Self {
        Column {
            name: name.into(),
            data: ColumnData::Categorical(values.into_iter().map(|v| Some(v.into())).collect()),
        }
    }

    pub fn kind(&self) -> ColumnKind {
        match self.data {
            ColumnData::Numeric(_) => ColumnKind::Numeric,
            ColumnData::Categorical(_) => ColumnKind::Categorical,
        }
    }

    pub fn len(&self) -> usize {
        match &self.data {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn null_count(&self) -> usize {
        match &self.data {
            ColumnData::Numeric(v) => v.iter().filter(|x| x.is_none()).count(),
            ColumnData::Categorical(v) => v.iter().filter(|x| x.is_none()).count(),
        }
    }

    /// Non-null numeric values; empty for categorical columns.
    pub fn numeric_values(&self) -> Vec<f64> {
        match &self.data {
            ColumnData::Numeric(v) => v.iter().flatten().copied().collect(),
            ColumnData::Categorical(_) => Vec::new(),
        }
    }

    /// Non-null values rendered as labels. Numeric values use their shortest
    /// round-trip representation.
    pub fn labels(&self) -> Vec<String> {
        match &self.data {
            ColumnData::Numeric(v) => v.iter().flatten().map(|x| x.to_string()).collect(),
            ColumnData::Categorical(v) => v.iter().flatten().cloned().collect(),
        }
    }

    /// Runs `f` over the non-null values in the representation requested.
    pub fn with_values<T>(&self, as_labels: bool, f: impl FnOnce(FeatureValues<'_>) -> T) -> T {
        if as_labels {
            let labels = self.labels();
            let refs: Vec<&str> = labels.iter().map(String::as_str).collect();
            f(FeatureValues::Categorical(&refs))
        } else {
            let values = self.numeric_values();
            f(FeatureValues::Numeric(&values))
        }
    }

    fn cell(&self, row: usize) -> String {
        match &self.data {
            ColumnData::Numeric(v) => v[row].map(|x| x.to_string()).unwrap_or_default(),
            ColumnData::Categorical(v) => v[row].clone().unwrap_or_default(),
        }
    }

    fn take(&self, rows: &[usize]) -> Column {
        let data = match &self.data {
            ColumnData::Numeric(v) => ColumnData::Numeric(rows.iter().map(|&i| v[i]).collect()),
            ColumnData::Categorical(v) => ColumnData::Categorical(rows.iter().map(|&i| v[i].clone()).collect()),
        };
        Column {
            name: self.name.clone(),
            data,
        }
    }
}

/// Rectangular table of named, typed columns.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    columns: Vec<Column>,
}

impl Dataset {
    pub fn new(columns: Vec<Column>) -> Result<Self, DatasetError> {
        let mut names = HashSet::new();
        for c in &columns {
            if !names.insert(c.name.as_str()) {
                return Err(DatasetError::DuplicateColumn(c.name.clone()));
            }
        }
        if let Some(first) = columns.first() {
            let expected = first.len();
            if let Some(bad) = columns.iter().find(|c| c.len() != expected) {
                return Err(DatasetError::LengthMismatch {
                    name: bad.name.clone(),
                    expected,
                    found: bad.len(),
                });
            }
        }
        Ok(Dataset { columns })
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Column::len)
    }

    pub fn is_empty(&self) -> bool {
        self.n_rows() == 0
    }

    /// Rows at the given indices, in the given order.
    pub fn take_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            columns: self.columns.iter().map(|c| c.take(rows)).collect(),
        }
    }

    /// Keeps only the named columns, in the given order.
    pub fn select(&self, names: &[&str]) -> Result<Dataset, DatasetError> {
        let columns = names
            .iter()
            .map(|n| {
                self.column(n)
                    .cloned()
                    .ok_or_else(|| DatasetError::UnknownColumn(n.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Dataset::new(columns)
    }

    /// Stacks datasets with identical column names and kinds.
    pub fn concat(parts: &[Dataset]) -> Result<Dataset, DatasetError> {
        let Some(first) = parts.first() else {
            return Ok(Dataset::default());
        };
        let mut columns = first.columns.clone();
        for part in &parts[1..] {
            if part.columns.len() != columns.len() {
                return Err(DatasetError::IncompatibleColumns);
            }
            for (acc, col) in columns.iter_mut().zip(&part.columns) {
                if acc.name != col.name {
                    return Err(DatasetError::IncompatibleColumns);
                }
                match (&mut acc.data, &col.data) {
                    (ColumnData::Numeric(a), ColumnData::Numeric(b)) => a.extend_from_slice(b),
                    (ColumnData::Categorical(a), ColumnData::Categorical(b)) => a.extend_from_slice(b),
                    _ => return Err(DatasetError::IncompatibleColumns),
                }
            }
        }
        Dataset::new(columns)
    }

    pub fn to_csv_bytes(&self) -> Vec<u8> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        // Writing to a Vec cannot fail.
        writer.write_record(self.column_names()).expect("in-memory write");
        for row in 0..self.n_rows() {
            writer
                .write_record(self.columns.iter().map(|c| c.cell(row)))
                .expect("in-memory write");
        }
        writer.into_inner().expect("in-memory flush")
    }

    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut file = File::create(path)?;
        file.write_all(&self.to_csv_bytes())
    }
}

/// Reads a CSV file. See [`parse_csv`].
pub fn ingest_csv(path: &Path) -> Result<Dataset, DatasetError> {
    let file = File::open(path).map_err(|source| DatasetError::Unreadable {
        path: path.display().to_string(),
        source,
    })?;
    parse_csv(file)
}

/// Parses comma-separated text with a header row. Empty fields are nulls. A
/// column whose non-null fields all parse as finite numbers is numeric;
/// anything else is categorical.
pub fn parse_csv<R: Read>(reader: R) -> Result<Dataset, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers: Vec<String> = reader
        .headers()
        .map_err(map_csv_error)?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(DatasetError::Empty);
    }
    let mut raw: Vec<Vec<Option<String>>> = vec![Vec::new(); headers.len()];
    for record in reader.records() {
        let record = record.map_err(map_csv_error)?;
        for (col, field) in raw.iter_mut().zip(record.iter()) {
            col.push((!field.is_empty()).then(|| field.to_string()));
        }
    }
    let columns = headers
        .into_iter()
        .zip(raw)
        .map(|(name, cells)| Column {
            name,
            data: infer_column(cells),
        })
        .collect();
    Dataset::new(columns)
}

fn infer_column(cells: Vec<Option<String>>) -> ColumnData {
    let parsed: Option<Vec<Option<f64>>> = cells
        .iter()
        .map(|c| match c {
            None => Some(None),
            Some(s) => s.trim().parse::<f64>().ok().filter(|v| v.is_finite()).map(Some),
        })
        .collect();
    match parsed {
        Some(values) if values.iter().any(Option::is_some) => ColumnData::Numeric(values),
        _ => ColumnData::Categorical(cells),
    }
}

fn map_csv_error(err: csv::Error) -> DatasetError {
    match err.kind() {
        csv::ErrorKind::UnequalLengths {
            pos,
            expected_len,
            len,
        } => DatasetError::Ragged {
            line: pos.as_ref().map_or(0, |p| p.line()),
            expected: *expected_len,
            found: *len,
        },
        _ => DatasetError::Csv(err.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numeric_file() {
        let d = parse_csv("a,b\n1,2\n3,4.5\n-1,0\n".as_bytes()).unwrap();
        assert_eq!(d.n_rows(), 3);
        assert!(d.columns().iter().all(|c| c.kind() == ColumnKind::Numeric));
        assert_eq!(d.column("b").unwrap().numeric_values(), vec![2.0, 4.5, 0.0]);
    }

    #[test]
    fn one_token_makes_column_categorical() {
        let d = parse_csv("a,b\n1,2\nx,4\n".as_bytes()).unwrap();
        assert_eq!(d.column("a").unwrap().kind(), ColumnKind::Categorical);
        assert_eq!(d.column("b").unwrap().kind(), ColumnKind::Numeric);
    }

    #[test]
    fn empty_fields_are_null() {
        let d = parse_csv("a,b\n1,\n,x\n\"\",y\n".as_bytes()).unwrap();
        assert_eq!(d.column("a").unwrap().null_count(), 2);
        assert_eq!(d.column("a").unwrap().kind(), ColumnKind::Numeric);
        assert_eq!(d.column("b").unwrap().null_count(), 1);
    }

    #[test]
    fn ragged_row_names_line() {
        let err = parse_csv("a,b\n1,2\n3\n".as_bytes()).unwrap_err();
        match err {
            DatasetError::Ragged { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_file_rejected() {
        assert!(matches!(parse_csv("".as_bytes()), Err(DatasetError::Empty)));
    }

    #[test]
    fn csv_round_trip() {
        let d = Dataset::new(vec![
            Column::numeric("x", vec![0.1, -2.5e-7, 3.0]),
            Column {
                name: "c".into(),
                data: ColumnData::Categorical(vec![Some("a,b".into()), None, Some("z".into())]),
            },
        ])
        .unwrap();
        let back = parse_csv(d.to_csv_bytes().as_slice()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn concat_and_take() {
        let a = Dataset::new(vec![Column::numeric("x", vec![1.0, 2.0])]).unwrap();
        let b = Dataset::new(vec![Column::numeric("x", vec![3.0])]).unwrap();
        let c = Dataset::concat(&[a, b]).unwrap();
        assert_eq!(c.column("x").unwrap().numeric_values(), vec![1.0, 2.0, 3.0]);
        assert_eq!(c.take_rows(&[2, 0]).column("x").unwrap().numeric_values(), vec![3.0, 1.0]);
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let err = Dataset::new(vec![Column::numeric("x", vec![1.0]), Column::numeric("y", vec![])]);
        assert!(matches!(err, Err(DatasetError::LengthMismatch { .. })));
    }
}
