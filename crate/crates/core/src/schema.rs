//! Typed table model, CSV ingestion, schema inference and train/test splitting.
//!
//! Discrete cells are stored as indices into their column's category list, so
//! the category order fixed by the schema is also the one-hot index order used
//! by the transform.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cardinality threshold below which numeric columns are treated as discrete.
pub const DEFAULT_MAX_CARDINALITY: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    Discrete,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnMeta {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default)]
    pub categories: Vec<String>,
    #[serde(default)]
    pub is_label: bool,
}

impl ColumnMeta {
    pub fn continuous(name: impl Into<String>) -> Self {
        ColumnMeta {
            name: name.into(),
            kind: ColumnKind::Continuous,
            categories: Vec::new(),
            is_label: false,
        }
    }

    pub fn discrete<S: Into<String>>(
        name: impl Into<String>,
        categories: impl IntoIterator<Item = S>,
    ) -> Self {
        ColumnMeta {
            name: name.into(),
            kind: ColumnKind::Discrete,
            categories: categories.into_iter().map(Into::into).collect(),
            is_label: false,
        }
    }

    pub fn labeled(mut self) -> Self {
        self.is_label = true;
        self
    }

    pub fn is_continuous(&self) -> bool {
        self.kind == ColumnKind::Continuous
    }

    pub fn cardinality(&self) -> usize {
        self.categories.len()
    }

    pub fn category_index(&self, token: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == token)
    }
}

/// Ordered column descriptors. Column order is preserved end to end.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub columns: Vec<ColumnMeta>,
}

impl Schema {
    pub fn new(columns: Vec<ColumnMeta>) -> Result<Self> {
        let schema = Schema { columns };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.columns.is_empty() {
            return Err(Error::InvalidSchema("schema has no columns".into()));
        }
        let mut names = BTreeSet::new();
        for col in &self.columns {
            if !names.insert(col.name.as_str()) {
                return Err(Error::InvalidSchema(format!(
                    "duplicate column name {:?}",
                    col.name
                )));
            }
            match col.kind {
                ColumnKind::Discrete => {
                    if col.categories.is_empty() {
                        return Err(Error::InvalidSchema(format!(
                            "discrete column {:?} has no categories",
                            col.name
                        )));
                    }
                    let distinct: BTreeSet<_> = col.categories.iter().collect();
                    if distinct.len() != col.categories.len() {
                        return Err(Error::InvalidSchema(format!(
                            "discrete column {:?} has duplicate categories",
                            col.name
                        )));
                    }
                }
                ColumnKind::Continuous => {
                    if !col.categories.is_empty() {
                        return Err(Error::InvalidSchema(format!(
                            "continuous column {:?} lists categories",
                            col.name
                        )));
                    }
                }
            }
        }
        let labels = self.columns.iter().filter(|c| c.is_label).count();
        if labels > 1 {
            return Err(Error::InvalidSchema(format!(
                "{labels} label columns; at most one allowed"
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn n_continuous(&self) -> usize {
        self.columns.iter().filter(|c| c.is_continuous()).count()
    }

    pub fn n_discrete(&self) -> usize {
        self.len() - self.n_continuous()
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn label_index(&self) -> Option<usize> {
        self.columns.iter().position(|c| c.is_label)
    }

    /// Marks `name` as the label column, clearing any previous label flag.
    pub fn with_label(mut self, name: &str) -> Result<Self> {
        let idx = self
            .column_index(name)
            .ok_or_else(|| Error::InvalidSchema(format!("no column named {name:?}")))?;
        for (i, col) in self.columns.iter_mut().enumerate() {
            col.is_label = i == idx;
        }
        Ok(self)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let schema: Schema = serde_json::from_str(text)
            .map_err(|e| Error::InvalidSchema(format!("schema document: {e}")))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string()).map_err(|e| Error::io(path, e))
    }
}

/// One cell. Discrete cells hold the index of their token in the column's categories.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Value {
    Real(f64),
    Category(usize),
}

impl Value {
    pub fn as_real(&self) -> Option<f64> {
        match *self {
            Value::Real(x) => Some(x),
            Value::Category(_) => None,
        }
    }

    pub fn as_category(&self) -> Option<usize> {
        match *self {
            Value::Category(k) => Some(k),
            Value::Real(_) => None,
        }
    }
}

/// A fully typed table. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    schema: Schema,
    rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(schema: Schema, rows: Vec<Vec<Value>>) -> Result<Self> {
        schema.validate()?;
        for (r, row) in rows.iter().enumerate() {
            if row.len() != schema.len() {
                return Err(Error::LengthMismatch {
                    expected: schema.len(),
                    got: row.len(),
                });
            }
            for (col, cell) in schema.columns.iter().zip(row) {
                match (col.kind, cell) {
                    (ColumnKind::Continuous, Value::Real(x)) if x.is_finite() => {}
                    (ColumnKind::Continuous, _) => {
                        return Err(Error::Parse {
                            row: r + 1,
                            column: col.name.clone(),
                            message: "expected a finite real".into(),
                        })
                    }
                    (ColumnKind::Discrete, Value::Category(k)) if *k < col.cardinality() => {}
                    (ColumnKind::Discrete, _) => {
                        return Err(Error::UnknownCategory {
                            row: r + 1,
                            column: col.name.clone(),
                            value: format!("{cell:?}"),
                        })
                    }
                }
            }
        }
        Ok(Table { schema, rows })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn rows(&self) -> &[Vec<Value>] {
        &self.rows
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn real_column(&self, col: usize) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r[col].as_real()).collect()
    }

    pub fn category_column(&self, col: usize) -> Vec<usize> {
        self.rows
            .iter()
            .filter_map(|r| r[col].as_category())
            .collect()
    }

    /// Rows selected by index, in the given order.
    pub fn select(&self, indices: &[usize]) -> Table {
        Table {
            schema: self.schema.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    /// Same rows under a schema that differs only in label designation.
    pub fn with_schema(&self, schema: Schema) -> Result<Table> {
        if schema.len() != self.schema.len()
            || schema
                .columns
                .iter()
                .zip(&self.schema.columns)
                .any(|(a, b)| a.name != b.name || a.kind != b.kind || a.categories != b.categories)
        {
            return Err(Error::SchemaMismatch(
                "replacement schema differs in columns".into(),
            ));
        }
        Ok(Table {
            schema,
            rows: self.rows.clone(),
        })
    }

    pub fn cell_text(&self, row: usize, col: usize) -> String {
        match self.rows[row][col] {
            Value::Real(x) => format_real(x),
            Value::Category(k) => self.schema.columns[col].categories[k].clone(),
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.schema.columns.iter().map(|c| c.name.as_str()))?;
        for r in 0..self.rows.len() {
            w.write_record((0..self.schema.len()).map(|c| self.cell_text(r, c)))?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("utf-8 output")
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Shortest representation that parses back to the same bits.
pub fn format_real(x: f64) -> String {
    format!("{x}")
}

/// Raw header plus string records, before typing.
#[derive(Clone, Debug)]
pub struct RawCsv {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub fn read_raw_csv<R: Read>(reader: R) -> Result<RawCsv> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(Error::EmptyInput);
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        rows.push(rec.iter().map(|s| s.to_string()).collect());
    }
    Ok(RawCsv { header, rows })
}

/// Loads a CSV file. Without a schema, one is inferred with the default cardinality threshold.
pub fn load_csv(path: impl AsRef<Path>, schema: Option<&Schema>) -> Result<Table> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(std::io::BufReader::new(file), schema)
}

pub fn read_csv<R: Read>(reader: R, schema: Option<&Schema>) -> Result<Table> {
    let raw = read_raw_csv(reader)?;
    let schema = match schema {
        Some(s) => {
            s.validate()?;
            let expected = s.names();
            if expected != raw.header {
                return Err(Error::HeaderMismatch {
                    expected,
                    found: raw.header,
                });
            }
            s.clone()
        }
        None => infer_schema(&raw.rows, &raw.header, DEFAULT_MAX_CARDINALITY)?,
    };
    type_rows(&raw.rows, schema)
}

/// Types string records under `schema`. Row numbers in errors are 1-based data rows.
pub fn type_rows(raw: &[Vec<String>], schema: Schema) -> Result<Table> {
    let lookups: Vec<HashMap<&str, usize>> = schema
        .columns
        .iter()
        .map(|c| {
            c.categories
                .iter()
                .enumerate()
                .map(|(i, s)| (s.as_str(), i))
                .collect()
        })
        .collect();
    let mut rows = Vec::with_capacity(raw.len());
    for (r, rec) in raw.iter().enumerate() {
        if rec.len() != schema.len() {
            return Err(Error::Parse {
                row: r + 1,
                column: String::new(),
                message: format!("expected {} fields, found {}", schema.len(), rec.len()),
            });
        }
        let mut row = Vec::with_capacity(rec.len());
        for ((col, cell), lookup) in schema.columns.iter().zip(rec).zip(&lookups) {
            if cell.trim().is_empty() {
                return Err(Error::MissingValue {
                    row: r + 1,
                    column: col.name.clone(),
                });
            }
            match col.kind {
                ColumnKind::Continuous => {
                    let x = parse_real(cell).ok_or_else(|| Error::Parse {
                        row: r + 1,
                        column: col.name.clone(),
                        message: format!("{cell:?} is not a finite number"),
                    })?;
                    row.push(Value::Real(x));
                }
                ColumnKind::Discrete => {
                    let k = lookup
                        .get(cell.as_str())
                        .copied()
                        .ok_or_else(|| Error::UnknownCategory {
                            row: r + 1,
                            column: col.name.clone(),
                            value: cell.clone(),
                        })?;
                    row.push(Value::Category(k));
                }
            }
        }
        rows.push(row);
    }
    Ok(Table { schema, rows })
}

fn parse_real(text: &str) -> Option<f64> {
    text.trim().parse::<f64>().ok().filter(|x| x.is_finite())
}

/// A column is discrete iff some cell is non-numeric or it has at most
/// `max_cardinality` distinct values. Categories are sorted lexicographically.
pub fn infer_schema(
    raw_rows: &[Vec<String>],
    header: &[String],
    max_cardinality: usize,
) -> Result<Schema> {
    if raw_rows.is_empty() || header.is_empty() {
        return Err(Error::EmptyInput);
    }
    if max_cardinality < 2 {
        return Err(Error::ConfigInvalid(format!(
            "max_cardinality must be at least 2, got {max_cardinality}"
        )));
    }
    let mut columns = Vec::with_capacity(header.len());
    for (c, name) in header.iter().enumerate() {
        let mut distinct = BTreeSet::new();
        let mut all_numeric = true;
        for rec in raw_rows {
            let cell = rec.get(c).map(String::as_str).unwrap_or("");
            if cell.trim().is_empty() {
                continue;
            }
            if all_numeric && parse_real(cell).is_none() {
                all_numeric = false;
            }
            distinct.insert(cell.to_string());
        }
        if distinct.is_empty() {
            return Err(Error::AllMissingColumn(name.clone()));
        }
        if !all_numeric || distinct.len() <= max_cardinality {
            columns.push(ColumnMeta::discrete(name.clone(), distinct));
        } else {
            columns.push(ColumnMeta::continuous(name.clone()));
        }
    }
    Schema::new(columns)
}

/// Seeded disjoint partition with `round(test_fraction * N)` test rows (clamped
/// so neither side is empty). Each side keeps the original relative row order.
pub fn split(table: &Table, test_fraction: f64, seed: u64) -> Result<(Table, Table)> {
    let n = table.n_rows();
    if n < 2 {
        return Err(Error::TooFewRows { needed: 2, got: n });
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::ConfigInvalid(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let n_test = ((test_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let (train_idx, test_idx) = split_indices(n, n_test, seed);
    Ok((table.select(&train_idx), table.select(&test_idx)))
}

pub(crate) fn split_indices(n: usize, n_test: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let mut test: Vec<usize> = idx[..n_test].to_vec();
    let mut train: Vec<usize> = idx[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    (train, test)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ab_schema() -> Schema {
        Schema::new(vec![
            ColumnMeta::continuous("a"),
            ColumnMeta::discrete("b", ["x", "y"]),
        ])
        .unwrap()
    }

    #[test]
    fn loads_typed_rows() {
        let t = read_csv("a,b\n1.5,x\n2.0,y\n".as_bytes(), Some(&ab_schema())).unwrap();
        assert_eq!(t.n_rows(), 2);
        assert_eq!(t.rows()[0], vec![Value::Real(1.5), Value::Category(0)]);
        assert_eq!(t.rows()[1], vec![Value::Real(2.0), Value::Category(1)]);
        assert_eq!(t.cell_text(1, 1), "y");
    }

    #[test]
    fn unknown_category_reports_location() {
        let err = read_csv("a,b\n1.5,z\n".as_bytes(), Some(&ab_schema())).unwrap_err();
        match err {
            Error::UnknownCategory { row, column, value } => {
                assert_eq!(row, 1);
                assert_eq!(column, "b");
                assert_eq!(value, "z");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_numeric_continuous_is_parse_error() {
        let err = read_csv("a,b\n1.5,x\nabc,y\n".as_bytes(), Some(&ab_schema())).unwrap_err();
        assert!(matches!(err, Error::Parse { row: 2, ref column, .. } if column == "a"));
    }

    #[test]
    fn empty_cell_is_rejected() {
        let err = read_csv("a,b\n,x\n".as_bytes(), Some(&ab_schema())).unwrap_err();
        assert!(matches!(err, Error::MissingValue { row: 1, .. }));
    }

    #[test]
    fn header_must_match_schema() {
        let err = read_csv("b,a\nx,1\n".as_bytes(), Some(&ab_schema())).unwrap_err();
        assert!(matches!(err, Error::HeaderMismatch { .. }));
    }

    #[test]
    fn infer_non_numeric_is_discrete() {
        let header = vec!["c".to_string()];
        let rows: Vec<Vec<String>> = ["a", "b", "a"].iter().map(|s| vec![s.to_string()]).collect();
        let s = infer_schema(&rows, &header, 20).unwrap();
        assert_eq!(s.columns[0], ColumnMeta::discrete("c", ["a", "b"]));
    }

    #[test]
    fn infer_high_cardinality_numeric_is_continuous() {
        let header = vec!["c".to_string()];
        let rows: Vec<Vec<String>> = (0..500).map(|i| vec![format!("{}", i as f64 * 0.5 + 1.0)]).collect();
        let s = infer_schema(&rows, &header, 20).unwrap();
        assert_eq!(s.columns[0].kind, ColumnKind::Continuous);
    }

    #[test]
    fn infer_low_cardinality_numeric_is_discrete() {
        let header = vec!["c".to_string()];
        let rows: Vec<Vec<String>> = ["0", "1", "0", "1"].iter().map(|s| vec![s.to_string()]).collect();
        let s = infer_schema(&rows, &header, 20).unwrap();
        assert_eq!(s.columns[0], ColumnMeta::discrete("c", ["0", "1"]));
    }

    #[test]
    fn infer_errors() {
        let header = vec!["c".to_string()];
        assert!(matches!(infer_schema(&[], &header, 20), Err(Error::EmptyInput)));
        let rows = vec![vec![String::new()], vec![" ".to_string()]];
        assert!(matches!(
            infer_schema(&rows, &header, 20),
            Err(Error::AllMissingColumn(_))
        ));
    }

    fn numbered_table(n: usize) -> Table {
        let schema = Schema::new(vec![ColumnMeta::continuous("i")]).unwrap();
        Table::new(schema, (0..n).map(|i| vec![Value::Real(i as f64)]).collect()).unwrap()
    }

    fn ids(t: &Table) -> Vec<usize> {
        t.real_column(0).iter().map(|&x| x as usize).collect()
    }

    #[test]
    fn split_partitions_rows() {
        let t = numbered_table(10);
        let (train, test) = split(&t, 0.3, 7).unwrap();
        assert_eq!((train.n_rows(), test.n_rows()), (7, 3));
        let mut all = ids(&train);
        all.extend(ids(&test));
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        let (train2, test2) = split(&t, 0.3, 7).unwrap();
        assert_eq!(train, train2);
        assert_eq!(test, test2);
    }

    #[test]
    fn split_half_of_four_is_disjoint() {
        let t = numbered_table(4);
        let (train, test) = split(&t, 0.5, 1).unwrap();
        let (a, b) = (ids(&train), ids(&test));
        assert_eq!((a.len(), b.len()), (2, 2));
        // Indices enumerated from the same seeded shuffle.
        let (ea, eb) = split_indices(4, 2, 1);
        assert_eq!((a.clone(), b.clone()), (ea, eb));
        assert!(a.iter().all(|i| !b.contains(i)));
    }

    #[test]
    fn split_needs_two_rows() {
        assert!(matches!(
            split(&numbered_table(1), 0.5, 0),
            Err(Error::TooFewRows { .. })
        ));
    }

    #[test]
    fn split_seeds_differ() {
        let t = numbered_table(10);
        let (base, _) = split(&t, 0.3, 0).unwrap();
        let differing = (1..=100u64)
            .filter(|&s| split(&t, 0.3, s).unwrap().0 != base)
            .count();
        assert!(differing >= 99, "only {differing} of 100 seeds differed");
    }

    #[test]
    fn schema_validation() {
        assert!(Schema::new(vec![ColumnMeta::discrete("d", Vec::<String>::new())]).is_err());
        assert!(Schema::new(vec![ColumnMeta::discrete("d", ["a", "a"])]).is_err());
        assert!(Schema::new(vec![
            ColumnMeta::discrete("d", ["a"]).labeled(),
            ColumnMeta::discrete("e", ["a"]).labeled(),
        ])
        .is_err());
    }

    #[test]
    fn schema_document_uses_exact_field_names() {
        let s = ab_schema().with_label("b").unwrap();
        let text = s.to_json_string();
        for key in ["\"name\"", "\"kind\"", "\"categories\"", "\"is_label\""] {
            assert!(text.contains(key), "{text}");
        }
        assert_eq!(Schema::from_json_str(&text).unwrap(), s);
        assert!(Schema::from_json_str(r#"{"columns":[{"name":"a","kind":"continuous","extra":1}]}"#).is_err());
    }

    #[test]
    fn census_shaped_schema_counts() {
        let mut cols: Vec<ColumnMeta> = (0..7).map(|i| ColumnMeta::continuous(format!("c{i}"))).collect();
        cols.extend((0..33).map(|i| ColumnMeta::discrete(format!("d{i}"), ["p", "q"])));
        cols.push(ColumnMeta::discrete("label", ["-50000", "50000+"]).labeled());
        let schema = Schema::new(cols).unwrap();
        let header = schema.names().join(",");
        let mut text = header + "\n";
        for r in 0..3 {
            let mut cells: Vec<String> = (0..7).map(|i| format!("{}", r * 7 + i)).collect();
            cells.extend((0..33).map(|_| "q".to_string()));
            cells.push("50000+".into());
            text += &(cells.join(",") + "\n");
        }
        let t = read_csv(text.as_bytes(), Some(&schema)).unwrap();
        assert_eq!(t.schema().n_continuous(), 7);
        assert_eq!(t.schema().n_discrete() - 1, 33);
        assert_eq!(t.schema().label_index(), Some(40));
    }
}
