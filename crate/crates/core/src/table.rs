//! Column-oriented tabular data: typed columns, role-annotated datasets,
//! and deterministic numeric encoding.
//!
//! A [`Dataset`] carries a key column plus exposure/outcome annotations and
//! is immutable once constructed; every downstream stage reads it

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TableError {
    #[error("column not found: {0}")]
    MissingColumn(String),
    #[error("duplicate key value: {0}")]
    DuplicateKey(String),
    #[error("key cell missing on row {0}")]
    MissingKeyCell(usize),
    #[error("ragged row at line {0}")]
    RaggedRow(u64),
    #[error("empty table")]
    EmptyTable,
    #[error("conflicting role assignment: {0}")]
    RoleConflict(String),
    #[error("role column {0} has missing cells")]
    RoleNotFullyObserved(String),
    #[error("duplicate column name: {0}")]
    DuplicateColumn(String),
    #[error("column {column} has {len} values, dataset has {n_rows} rows")]
    LengthMismatch {
        column: String,
        len: usize,
        n_rows: usize,
    },
    #[error("empty column selection")]
    EmptySelection,
    #[error("all rows dropped by missing-value filtering")]
    AllRowsDropped,
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    Numeric,
    Categorical,
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dtype::Numeric => write!(f, "numeric"),
            Dtype::Categorical => write!(f, "categorical"),
        }
    }
}

/// A single typed column. Numeric cells are parsed finite reals,
/// categorical cells are non-empty strings; either kind may be missing.
#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub values: ColumnValues,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnValues {
    Numeric(Vec<Option<f64>>),
    Categorical(Vec<Option<String>>),
}

impl Column {
    pub fn numeric(name: impl Into<String>, values: Vec<Option<f64>>) -> Self {
        Column {
            name: name.into(),
            values: ColumnValues::Numeric(values),
        }
    }

    pub fn categorical(name: impl Into<String>, values: Vec<Option<String>>) -> Self {
        Column {
            name: name.into(),
            values: ColumnValues::Categorical(values),
        }
    }

    /// Infer the dtype from raw cells and build the column: numeric iff
    /// every non-missing cell parses as a finite real.
    pub fn from_cells(name: impl Into<String>, cells: Vec<Option<String>>) -> Self {
        match infer_dtype(cells.iter().map(|c| c.as_deref())) {
            Dtype::Numeric => Column::numeric(
                name,
                cells
                    .iter()
                    .map(|c| c.as_deref().map(|s| s.trim().parse::<f64>().expect("checked numeric")))
                    .collect(),
            ),
            Dtype::Categorical => Column::categorical(name, cells),
        }
    }

    pub fn dtype(&self) -> Dtype {
        match self.values {
            ColumnValues::Numeric(_) => Dtype::Numeric,
            ColumnValues::Categorical(_) => Dtype::Categorical,
        }
    }

    pub fn len(&self) -> usize {
        match &self.values {
            ColumnValues::Numeric(v) => v.len(),
            ColumnValues::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_present(&self, row: usize) -> bool {
        match &self.values {
            ColumnValues::Numeric(v) => v[row].is_some(),
            ColumnValues::Categorical(v) => v[row].is_some(),
        }
    }

    pub fn missing_count(&self) -> usize {
        (0..self.len()).filter(|&r| !self.is_present(r)).count()
    }

    /// Canonical string form of a cell; numeric cells use the shortest
    /// round-trip float formatting.
    pub fn cell_str(&self, row: usize) -> Option<String> {
        match &self.values {
            ColumnValues::Numeric(v) => v[row].map(|x| format!("{x}")),
            ColumnValues::Categorical(v) => v[row].clone(),
        }
    }

    pub fn numeric_cell(&self, row: usize) -> Option<f64> {
        match &self.values {
            ColumnValues::Numeric(v) => v[row],
            ColumnValues::Categorical(_) => None,
        }
    }
}

/// Infer Numeric iff every non-missing cell parses as a finite real.
pub fn infer_dtype<'a>(cells: impl Iterator<Item = Option<&'a str>>) -> Dtype {
    for cell in cells.flatten() {
        match cell.trim().parse::<f64>() {
            Ok(v) if v.is_finite() => {}
            _ => return Dtype::Categorical,
        }
    }
    Dtype::Numeric
}

/// Role annotations for the columns under causal study.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roles {
    pub key: String,
    pub exposure: String,
    pub outcome: String,
}

/// An immutable column-oriented table with a unique key column and
/// exposure/outcome roles.
#[derive(Debug, Clone)]
pub struct Dataset {
    columns: Vec<Column>,
    roles: Roles,
    n_rows: usize,
}

impl Dataset {
    pub fn new(columns: Vec<Column>, roles: Roles) -> Result<Self, TableError> {
        if columns.is_empty() {
            return Err(TableError::EmptyTable);
        }
        let n_rows = columns[0].len();
        if n_rows == 0 {
            return Err(TableError::EmptyTable);
        }
        let mut seen = BTreeSet::new();
        for c in &columns {
            if !seen.insert(c.name.clone()) {
                return Err(TableError::DuplicateColumn(c.name.clone()));
            }
            if c.len() != n_rows {
                return Err(TableError::LengthMismatch {
                    column: c.name.clone(),
                    len: c.len(),
                    n_rows,
                });
            }
        }
        if roles.exposure == roles.outcome {
            return Err(TableError::RoleConflict(format!(
                "exposure and outcome are both {}",
                roles.exposure
            )));
        }
        if roles.key == roles.exposure || roles.key == roles.outcome {
            return Err(TableError::RoleConflict(format!(
                "key column {} also carries a causal role",
                roles.key
            )));
        }
        let ds = Dataset {
            columns,
            roles,
            n_rows,
        };
        for name in [&ds.roles.key, &ds.roles.exposure, &ds.roles.outcome] {
            if ds.column(name).is_none() {
                return Err(TableError::MissingColumn(name.clone()));
            }
        }
        let key = ds.column(&ds.roles.key).expect("checked");
        let mut seen_keys = BTreeSet::new();
        for row in 0..n_rows {
            match key.cell_str(row) {
                None => return Err(TableError::MissingKeyCell(row)),
                Some(v) => {
                    if !seen_keys.insert(v.clone()) {
                        return Err(TableError::DuplicateKey(v));
                    }
                }
            }
        }
        for name in [&ds.roles.exposure, &ds.roles.outcome] {
            let col = ds.column(name).expect("checked");
            if col.missing_count() > 0 {
                return Err(TableError::RoleNotFullyObserved(name.clone()));
            }
        }
        Ok(ds)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn roles(&self) -> &Roles {
        &self.roles
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn exposure(&self) -> &Column {
        self.column(&self.roles.exposure).expect("validated")
    }

    pub fn outcome(&self) -> &Column {
        self.column(&self.roles.outcome).expect("validated")
    }

    pub fn key_column(&self) -> &Column {
        self.column(&self.roles.key).expect("validated")
    }

    /// Key cell values in row order.
    pub fn key_values(&self) -> Vec<String> {
        let key = self.key_column();
        (0..self.n_rows)
            .map(|r| key.cell_str(r).expect("keys fully observed"))
            .collect()
    }

    /// A new dataset with extra columns appended; name collisions and
    /// length mismatches are rejected.
    pub fn with_columns(&self, extra: Vec<Column>) -> Result<Dataset, TableError> {
        let mut columns = self.columns.clone();
        columns.extend(extra);
        Dataset::new(columns, self.roles.clone())
    }
}

/// Load a CSV file with a mandatory header row into a typed dataset.
/// Cells equal to `missing_marker` (or empty) become missing.
pub fn load_csv(
    path: impl AsRef<Path>,
    key: &str,
    exposure: &str,
    outcome: &str,
    missing_marker: &str,
) -> Result<Dataset, TableError> {
    let raw = load_raw_csv(path, missing_marker)?;
    let columns = raw.into_columns()?;
    Dataset::new(
        columns,
        Roles {
            key: key.to_string(),
            exposure: exposure.to_string(),
            outcome: outcome.to_string(),
        },
    )
}

/// Write a dataset back as RFC-4180 CSV, preserving column order and
/// rendering missing cells with the given marker.
pub fn write_csv(
    dataset: &Dataset,
    path: impl AsRef<Path>,
    missing_marker: &str,
) -> Result<(), TableError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(dataset.columns.iter().map(|c| c.name.as_str()))?;
    for row in 0..dataset.n_rows {
        let record: Vec<String> = dataset
            .columns
            .iter()
            .map(|c| c.cell_str(row).unwrap_or_else(|| missing_marker.to_string()))
            .collect();
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// An untyped CSV table: header plus optional string cells. Used for data
/// lake tables where no roles apply.
#[derive(Debug, Clone)]
pub struct RawTable {
    pub headers: Vec<String>,
    /// Row-major cells; `None` is missing.
    pub rows: Vec<Vec<Option<String>>>,
}

impl RawTable {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    /// Cells of one column in row order.
    pub fn column_cells(&self, idx: usize) -> Vec<Option<String>> {
        self.rows.iter().map(|r| r[idx].clone()).collect()
    }

    pub fn column_dtype(&self, idx: usize) -> Dtype {
        infer_dtype(self.rows.iter().map(|r| r[idx].as_deref()))
    }

    fn into_columns(self) -> Result<Vec<Column>, TableError> {
        let mut seen = BTreeSet::new();
        for h in &self.headers {
            if !seen.insert(h.clone()) {
                return Err(TableError::DuplicateColumn(h.clone()));
            }
        }
        Ok((0..self.headers.len())
            .map(|i| Column::from_cells(self.headers[i].clone(), self.column_cells(i)))
            .collect())
    }
}

pub fn load_raw_csv(
    path: impl AsRef<Path>,
    missing_marker: &str,
) -> Result<RawTable, TableError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if headers.is_empty() {
        return Err(TableError::EmptyTable);
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        if record.len() != headers.len() {
            let line = record.position().map_or(0, |p| p.line());
            return Err(TableError::RaggedRow(line));
        }
        rows.push(
            record
                .iter()
                .map(|cell| {
                    let cell = cell.trim();
                    if cell.is_empty() || cell == missing_marker {
                        None
                    } else {
                        Some(cell.to_string())
                    }
                })
                .collect(),
        );
    }
    if rows.is_empty() {
        return Err(TableError::EmptyTable);
    }
    Ok(RawTable { headers, rows })
}

/// How one column was mapped into the numeric matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum EncodingNote {
    Numeric,
    /// Categorical levels in first-appearance order; a cell's code is its
    /// index in this list.
    Categorical { levels: Vec<String> },
}

/// A complete-case numeric view over a column selection. Rows with any
/// missing value in the selection are excluded and recorded.
#[derive(Debug, Clone)]
pub struct EncodedMatrix {
    pub column_names: Vec<String>,
    pub data: DMatrix<f64>,
    pub encoding_notes: Vec<EncodingNote>,
    /// Dataset row indices that survived, in order.
    pub kept_rows: Vec<usize>,
    pub dropped_rows: Vec<usize>,
}

impl EncodedMatrix {
    pub fn n_rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn column(&self, idx: usize) -> Vec<f64> {
        self.data.column(idx).iter().copied().collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name)
    }
}

/// Deterministically encode the selected columns: numeric cells pass
/// through, categorical cells are integer-coded by first appearance.
pub fn encode(dataset: &Dataset, columns: &[String]) -> Result<EncodedMatrix, TableError> {
    if columns.is_empty() {
        return Err(TableError::EmptySelection);
    }
    let mut cols = Vec::with_capacity(columns.len());
    for name in columns {
        cols.push(
            dataset
                .column(name)
                .ok_or_else(|| TableError::MissingColumn(name.clone()))?,
        );
    }
    let mut kept_rows = Vec::new();
    let mut dropped_rows = Vec::new();
    for row in 0..dataset.n_rows() {
        if cols.iter().all(|c| c.is_present(row)) {
            kept_rows.push(row);
        } else {
            dropped_rows.push(row);
        }
    }
    if kept_rows.is_empty() {
        return Err(TableError::AllRowsDropped);
    }
    let mut data = DMatrix::zeros(kept_rows.len(), cols.len());
    let mut notes = Vec::with_capacity(cols.len());
    for (j, col) in cols.iter().enumerate() {
        match &col.values {
            ColumnValues::Numeric(values) => {
                for (i, &row) in kept_rows.iter().enumerate() {
                    data[(i, j)] = values[row].expect("complete-case");
                }
                notes.push(EncodingNote::Numeric);
            }
            ColumnValues::Categorical(values) => {
                let mut levels: Vec<String> = Vec::new();
                for (i, &row) in kept_rows.iter().enumerate() {
                    let v = values[row].as_ref().expect("complete-case");
                    let code = match levels.iter().position(|l| l == v) {
                        Some(c) => c,
                        None => {
                            levels.push(v.clone());
                            levels.len() - 1
                        }
                    };
                    data[(i, j)] = code as f64;
                }
                notes.push(EncodingNote::Categorical { levels });
            }
        }
    }
    Ok(EncodedMatrix {
        column_names: columns.to_vec(),
        data,
        encoding_notes: notes,
        kept_rows,
        dropped_rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    pub(crate) const STATES_CSV: &str = "\
State,Mask Policy,Confirmed Cases,New Cases,Recovered,Death cases
MA,yes,121046,2740,4980,109
FL,yes,640978,24349,25140,55
CA,no,735235,31150,42170,34
SD,no,15300,1791,2083,49
";

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn states() -> Dataset {
        let f = write_temp(STATES_CSV);
        load_csv(f.path(), "State", "Mask Policy", "Death cases", "").unwrap()
    }

    #[test]
    fn load_states_table() {
        let ds = states();
        assert_eq!(ds.n_rows(), 4);
        assert_eq!(ds.column("Mask Policy").unwrap().dtype(), Dtype::Categorical);
        assert_eq!(ds.column("Confirmed Cases").unwrap().dtype(), Dtype::Numeric);
        assert_eq!(ds.exposure().cell_str(0).as_deref(), Some("yes"));
        assert_eq!(ds.outcome().numeric_cell(3), Some(49.0));
    }

    #[test]
    fn mixed_column_is_categorical() {
        let csv = "k,t,o,a\n1,x,1.0,1\n2,y,2.0,2\n3,x,3.0,x\n";
        let f = write_temp(csv);
        let ds = load_csv(f.path(), "k", "t", "o", "").unwrap();
        assert_eq!(ds.column("a").unwrap().dtype(), Dtype::Categorical);
    }

    #[test]
    fn degenerate_roles_rejected() {
        let csv = "k\n1\n";
        let f = write_temp(csv);
        let err = load_csv(f.path(), "k", "k", "k", "").unwrap_err();
        assert!(matches!(
            err,
            TableError::RoleConflict(_) | TableError::MissingColumn(_)
        ));
    }

    #[test]
    fn missing_column_reported_by_name() {
        let f = write_temp(STATES_CSV);
        let err = load_csv(f.path(), "State", "Mask Policy", "nope", "").unwrap_err();
        assert!(matches!(err, TableError::MissingColumn(name) if name == "nope"));
    }

    #[test]
    fn duplicate_key_rejected() {
        let csv = "k,t,o\na,1,2\na,3,4\n";
        let f = write_temp(csv);
        let err = load_csv(f.path(), "k", "t", "o", "").unwrap_err();
        assert!(matches!(err, TableError::DuplicateKey(v) if v == "a"));
    }

    #[test]
    fn ragged_row_reported() {
        let csv = "k,t,o\na,1,2\nb,3\n";
        let f = write_temp(csv);
        let err = load_csv(f.path(), "k", "t", "o", "").unwrap_err();
        assert!(matches!(err, TableError::RaggedRow(_)));
    }

    #[test]
    fn custom_missing_marker() {
        let csv = "k,t,o,snow\nMA,yes,109,51.05\nFL,yes,55,-\nCA,no,34,-\nSD,no,49,37.43\n";
        let f = write_temp(csv);
        let ds = load_csv(f.path(), "k", "t", "o", "-").unwrap();
        let snow = ds.column("snow").unwrap();
        assert_eq!(snow.dtype(), Dtype::Numeric);
        assert_eq!(snow.missing_count(), 2);
        let enc = encode(&ds, &["snow".to_string()]).unwrap();
        assert_eq!(enc.n_rows(), 2);
        assert_eq!(enc.kept_rows, vec![0, 3]);
        assert_eq!(enc.dropped_rows, vec![1, 2]);
        assert_eq!(enc.column(0), vec![51.05, 37.43]);
    }

    #[test]
    fn first_appearance_coding() {
        let ds = states();
        let enc = encode(&ds, &["Mask Policy".to_string()]).unwrap();
        assert_eq!(enc.column(0), vec![0.0, 0.0, 1.0, 1.0]);
        match &enc.encoding_notes[0] {
            EncodingNote::Categorical { levels } => assert_eq!(levels, &["yes", "no"]),
            _ => panic!("expected categorical note"),
        }
    }

    #[test]
    fn row_drop_is_per_selection() {
        let csv = "k,t,o,a,b\n1,x,1,5,\n2,y,2,6,1\n3,x,3,,2\n4,y,4,8,3\n";
        let f = write_temp(csv);
        let ds = load_csv(f.path(), "k", "t", "o", "").unwrap();
        let enc_a = encode(&ds, &["a".to_string()]).unwrap();
        assert_eq!(enc_a.n_rows(), 3);
        assert_eq!(enc_a.dropped_rows, vec![2]);
        let enc_b = encode(&ds, &["b".to_string()]).unwrap();
        assert_eq!(enc_b.n_rows(), 3);
        assert_eq!(enc_b.dropped_rows, vec![0]);
        let both = encode(&ds, &["a".to_string(), "b".to_string()]).unwrap();
        assert_eq!(both.n_rows(), 2);
    }

    #[test]
    fn empty_selection_and_all_dropped() {
        let ds = states();
        assert!(matches!(encode(&ds, &[]), Err(TableError::EmptySelection)));
        let csv = "k,t,o,a\n1,x,1,\n2,y,2,\n";
        let f = write_temp(csv);
        let ds = load_csv(f.path(), "k", "t", "o", "").unwrap();
        assert!(matches!(
            encode(&ds, &["a".to_string()]),
            Err(TableError::AllRowsDropped)
        ));
    }

    #[test]
    fn write_back_fixed_point() {
        let ds = states();
        let out = tempfile::NamedTempFile::new().unwrap();
        write_csv(&ds, out.path(), "").unwrap();
        let re = load_csv(out.path(), "State", "Mask Policy", "Death cases", "").unwrap();
        assert_eq!(re.n_rows(), ds.n_rows());
        for (a, b) in ds.columns().iter().zip(re.columns()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.dtype(), b.dtype());
            for row in 0..ds.n_rows() {
                assert_eq!(a.cell_str(row), b.cell_str(row));
            }
        }
    }

    #[test]
    fn role_columns_must_be_fully_observed() {
        let csv = "k,t,o\n1,x,1\n2,,2\n";
        let f = write_temp(csv);
        let err = load_csv(f.path(), "k", "t", "o", "").unwrap_err();
        assert!(matches!(err, TableError::RoleNotFullyObserved(c) if c == "t"));
    }
}
