//! In-memory tables, CSV persistence and referential-integrity checks.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::DataError;
use crate::schema::{ColumnKind, DatasetSchema, TableSchema};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Int(i64),
    Text(String),
    /// Transient state between a delete and the matching insert.
    Empty,
}

impl Cell {
    pub fn as_int(&self) -> Option<i64> {
        match self {
            Cell::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, Cell::Empty)
    }

    pub fn default_for(kind: ColumnKind) -> Cell {
        match kind {
            ColumnKind::Integer => Cell::Int(0),
            ColumnKind::Text => Cell::Text(String::new()),
        }
    }

    pub fn fits(&self, kind: ColumnKind) -> bool {
        matches!((self, kind), (Cell::Int(_), ColumnKind::Integer) | (Cell::Text(_), ColumnKind::Text))
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Int(v) => write!(f, "{v}"),
            Cell::Text(s) => f.write_str(s),
            Cell::Empty => f.write_str("<empty>"),
        }
    }
}

/// A row: the primary key plus the non-key cells in declared column order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tuple {
    pub id: i64,
    pub values: Vec<Cell>,
}

#[derive(Debug, Clone)]
pub struct Table {
    name: String,
    rows: Vec<Tuple>,
    index: HashMap<i64, usize>,
}

impl PartialEq for Table {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.rows == other.rows
    }
}

impl Table {
    /// Builds a table without checking key uniqueness; rows are sorted by key.
    pub fn new(name: impl Into<String>, mut rows: Vec<Tuple>) -> Self {
        rows.sort_by_key(|r| r.id);
        let mut index = HashMap::with_capacity(rows.len());
        for (pos, r) in rows.iter().enumerate() {
            index.entry(r.id).or_insert(pos);
        }
        Table { name: name.into(), rows, index }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Tuple] {
        &self.rows
    }

    pub fn ids(&self) -> impl Iterator<Item = i64> + '_ {
        self.rows.iter().map(|r| r.id)
    }

    pub fn get(&self, id: i64) -> Option<&Tuple> {
        self.index.get(&id).map(|&p| &self.rows[p])
    }

    pub fn contains(&self, id: i64) -> bool {
        self.index.contains_key(&id)
    }

    pub fn cell(&self, id: i64, col: usize) -> Option<&Cell> {
        self.get(id).and_then(|t| t.values.get(col))
    }

    pub fn max_id(&self) -> Option<i64> {
        self.rows.last().map(|r| r.id)
    }

    pub fn next_id(&self) -> i64 {
        self.max_id().map_or(1, |m| m + 1)
    }

    pub(crate) fn set_cell(&mut self, id: i64, col: usize, cell: Cell) {
        let pos = self.index[&id];
        self.rows[pos].values[col] = cell;
    }

    pub(crate) fn push(&mut self, tuple: Tuple) {
        debug_assert!(self.max_id().is_none_or(|m| tuple.id > m));
        self.index.insert(tuple.id, self.rows.len());
        self.rows.push(tuple);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum Violation {
    DuplicatePrimaryKey { table: String, id: i64 },
    DanglingForeignKey { table: String, tuple: i64, column: String, value: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IntegrityReport {
    pub violations: Vec<Violation>,
}

impl IntegrityReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: DatasetSchema,
    tables: Vec<Table>,
}

impl Dataset {
    pub fn new(schema: DatasetSchema, tables: Vec<Table>) -> Self {
        assert_eq!(schema.tables.len(), tables.len(), "one table per schema entry");
        Dataset { schema, tables }
    }

    pub fn empty(schema: DatasetSchema) -> Self {
        let tables = schema.tables.iter().map(|t| Table::new(t.name.clone(), Vec::new())).collect();
        Dataset { schema, tables }
    }

    pub fn schema(&self) -> &DatasetSchema {
        &self.schema
    }

    pub fn tables(&self) -> &[Table] {
        &self.tables
    }

    pub fn table(&self, idx: usize) -> &Table {
        &self.tables[idx]
    }

    pub fn table_index(&self, name: &str) -> Option<usize> {
        self.schema.table_index(name)
    }

    pub fn table_by_name(&self, name: &str) -> Option<&Table> {
        self.table_index(name).map(|i| &self.tables[i])
    }

    pub(crate) fn table_mut(&mut self, idx: usize) -> &mut Table {
        &mut self.tables[idx]
    }

    pub fn sizes(&self) -> BTreeMap<String, u64> {
        self.tables.iter().map(|t| (t.name.clone(), t.len() as u64)).collect()
    }

    pub fn tuple_count(&self) -> usize {
        self.tables.iter().map(Table::len).sum()
    }

    pub fn empty_cell_count(&self) -> usize {
        self.tables
            .iter()
            .flat_map(|t| t.rows.iter())
            .map(|r| r.values.iter().filter(|c| c.is_empty()).count())
            .sum()
    }

    /// Lists every duplicated key and every foreign key that points nowhere.
    /// Empty foreign-key cells are not violations.
    pub fn validate_integrity(&self) -> IntegrityReport {
        let mut violations = Vec::new();
        for (ti, table) in self.tables.iter().enumerate() {
            for w in table.rows.windows(2) {
                if w[0].id == w[1].id {
                    violations.push(Violation::DuplicatePrimaryKey { table: table.name.clone(), id: w[0].id });
                }
            }
            let ts = &self.schema.tables[ti];
            for fk in self.schema.resolved_fks(ti) {
                let target = &self.tables[fk.target];
                let column = ts.value_columns().nth(fk.value_index).expect("fk column").name.clone();
                for r in &table.rows {
                    let ok = match &r.values[fk.value_index] {
                        Cell::Empty => true,
                        Cell::Int(v) => target.contains(*v),
                        Cell::Text(_) => false,
                    };
                    if !ok {
                        violations.push(Violation::DanglingForeignKey {
                            table: table.name.clone(),
                            tuple: r.id,
                            column: column.clone(),
                            value: r.values[fk.value_index].to_string(),
                        });
                    }
                }
            }
        }
        IntegrityReport { violations }
    }

    /// Reads `<dir>/<table>.csv` for every table and checks integrity.
    pub fn load(schema: &DatasetSchema, dir: &Path) -> Result<Self, DataError> {
        schema.validate(true)?;
        let mut tables = Vec::with_capacity(schema.tables.len());
        for ts in &schema.tables {
            let path = dir.join(format!("{}.csv", ts.name));
            if !path.is_file() {
                return Err(DataError::MissingTableFile { table: ts.name.clone(), path });
            }
            let file = std::fs::File::open(&path).map_err(|e| DataError::io(&path, e))?;
            tables.push(read_table(ts, file)?);
        }
        let ds = Dataset::new(schema.clone(), tables);
        if let Some(v) = ds.validate_integrity().violations.into_iter().next() {
            return Err(match v {
                Violation::DuplicatePrimaryKey { table, id } => DataError::DuplicatePrimaryKey { table, id },
                Violation::DanglingForeignKey { table, tuple, column, value } => {
                    DataError::DanglingForeignKey { table, tuple, column, value }
                }
            });
        }
        Ok(ds)
    }

    /// Writes one CSV per table, rows in key order.
    pub fn write(&self, dir: &Path) -> Result<(), DataError> {
        let pending = self.empty_cell_count();
        if pending > 0 {
            return Err(DataError::PendingEmptyCells { count: pending });
        }
        std::fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
        for (ts, table) in self.schema.tables.iter().zip(&self.tables) {
            let path = dir.join(format!("{}.csv", ts.name));
            let file = std::fs::File::create(&path).map_err(|e| DataError::io(&path, e))?;
            write_table(ts, table, file).map_err(|e| match e {
                DataError::Csv { table, message } => DataError::Csv { table, message: format!("{}: {message}", path.display()) },
                other => other,
            })?;
        }
        Ok(())
    }
}

pub(crate) fn read_table<R: std::io::Read>(ts: &TableSchema, input: R) -> Result<Table, DataError> {
    let csv_err = |e: csv::Error| DataError::Csv { table: ts.name.clone(), message: e.to_string() };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = rdr.headers().map_err(csv_err)?.clone();
    let mut positions = Vec::with_capacity(ts.columns.len());
    for c in &ts.columns {
        let Some(p) = header.iter().position(|h| h == c.name) else {
            return Err(DataError::Csv { table: ts.name.clone(), message: format!("header lacks column `{}`", c.name) });
        };
        positions.push(p);
    }
    let key = ts.key_position();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        let mut id = 0;
        let mut values = Vec::with_capacity(ts.columns.len() - 1);
        for (ci, c) in ts.columns.iter().enumerate() {
            let raw = rec.get(positions[ci]).unwrap_or("");
            let cell = match c.kind {
                ColumnKind::Integer => match raw.parse::<i64>() {
                    Ok(v) => Cell::Int(v),
                    Err(_) => {
                        return Err(DataError::BadCell {
                            table: ts.name.clone(),
                            line,
                            column: c.name.clone(),
                            value: raw.to_string(),
                        })
                    }
                },
                ColumnKind::Text => Cell::Text(raw.to_string()),
            };
            if ci == key {
                id = cell.as_int().expect("integer key");
            } else {
                values.push(cell);
            }
        }
        rows.push(Tuple { id, values });
    }
    Ok(Table::new(ts.name.clone(), rows))
}

pub(crate) fn write_table<W: std::io::Write>(ts: &TableSchema, table: &Table, out: W) -> Result<(), DataError> {
    let csv_err = |e: csv::Error| DataError::Csv { table: ts.name.clone(), message: e.to_string() };
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ts.columns.iter().map(|c| c.name.as_str())).map_err(csv_err)?;
    let key = ts.key_position();
    let mut record: Vec<String> = Vec::with_capacity(ts.columns.len());
    for r in table.rows() {
        record.clear();
        let mut vals = r.values.iter();
        for ci in 0..ts.columns.len() {
            if ci == key {
                record.push(r.id.to_string());
            } else {
                record.push(vals.next().expect("value per column").to_string());
            }
        }
        w.write_record(&record).map_err(csv_err)?;
    }
    w.flush().map_err(|e| DataError::Csv { table: ts.name.clone(), message: e.to_string() })?;
    Ok(())
}
