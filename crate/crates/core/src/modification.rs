//! Modification primitives, their resolution into cell changes, and the
//! journal format.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{Cell, Dataset, Tuple};
use crate::error::{DataError, ModificationError};

/// Column indexes address non-key columns, zero-based in declared order.
/// `values` holds one value per listed column and applies to every listed
/// tuple.
#[derive(Debug, Clone, PartialEq)]
pub enum Modification {
    DeleteValues { table: usize, tuple_ids: Vec<i64>, col_indexes: Vec<usize> },
    InsertValues { table: usize, tuple_ids: Vec<i64>, col_indexes: Vec<usize>, values: Vec<Cell> },
    ReplaceValues { table: usize, tuple_ids: Vec<i64>, col_indexes: Vec<usize>, values: Vec<Cell> },
    /// Adds a tuple keyed one past the current maximum. `values` covers all
    /// non-key columns.
    AppendTuple { table: usize, values: Vec<Cell> },
}

impl Modification {
    pub fn table(&self) -> usize {
        match self {
            Modification::DeleteValues { table, .. }
            | Modification::InsertValues { table, .. }
            | Modification::ReplaceValues { table, .. }
            | Modification::AppendTuple { table, .. } => *table,
        }
    }

    pub fn op_name(&self) -> &'static str {
        match self {
            Modification::DeleteValues { .. } => "DeleteValues",
            Modification::InsertValues { .. } => "InsertValues",
            Modification::ReplaceValues { .. } => "ReplaceValues",
            Modification::AppendTuple { .. } => "AppendTuple",
        }
    }

    /// Moves the cells of one tuple to new values as a delete followed by an
    /// insert.
    pub fn move_cells(table: usize, tuple: i64, cols: Vec<usize>, values: Vec<Cell>) -> [Modification; 2] {
        [
            Modification::DeleteValues { table, tuple_ids: vec![tuple], col_indexes: cols.clone() },
            Modification::InsertValues { table, tuple_ids: vec![tuple], col_indexes: cols, values },
        ]
    }

    pub fn replace_one(table: usize, tuple: i64, col: usize, value: Cell) -> Modification {
        Modification::ReplaceValues { table, tuple_ids: vec![tuple], col_indexes: vec![col], values: vec![value] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellChange {
    pub table: usize,
    pub tuple: i64,
    pub col: usize,
    pub old: Cell,
    pub new: Cell,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Change {
    Cell(CellChange),
    Append { table: usize, tuple: Tuple },
}

impl Change {
    pub fn table(&self) -> usize {
        match self {
            Change::Cell(c) => c.table,
            Change::Append { table, .. } => *table,
        }
    }
}

/// A batch of modifications resolved against a dataset state.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChangeSet {
    pub changes: Vec<Change>,
}

impl ChangeSet {
    pub fn is_empty(&self) -> bool {
        self.changes.is_empty()
    }

    /// Boundaries of maximal runs of changes on the same table.
    pub fn table_runs(&self) -> Vec<usize> {
        let mut ends = Vec::new();
        for i in 1..self.changes.len() {
            if self.changes[i].table() != self.changes[i - 1].table() {
                ends.push(i);
            }
        }
        if !self.changes.is_empty() {
            ends.push(self.changes.len());
        }
        ends
    }

    /// (table, tuple) pairs touched, in first-touch order without repeats.
    pub fn touched(&self) -> Vec<(usize, i64)> {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        for c in &self.changes {
            let key = match c {
                Change::Cell(cc) => (cc.table, cc.tuple),
                Change::Append { table, tuple } => (*table, tuple.id),
            };
            if seen.insert(key) {
                out.push(key);
            }
        }
        out
    }

    pub fn apply_to(&self, ds: &mut Dataset) {
        for c in &self.changes {
            match c {
                Change::Cell(cc) => ds.table_mut(cc.table).set_cell(cc.tuple, cc.col, cc.new.clone()),
                Change::Append { table, tuple } => ds.table_mut(*table).push(tuple.clone()),
            }
        }
    }
}

/// Resolves `mods` in order against `ds`, checking that each primitive is
/// well formed against the state left by the ones before it. Appended tuples
/// receive keys one past the running maximum.
pub fn resolve(ds: &Dataset, mods: &[Modification]) -> Result<ChangeSet, ModificationError> {
    let mut overlay: HashMap<(usize, i64, usize), Cell> = HashMap::new();
    let mut appended: HashMap<usize, Vec<Tuple>> = HashMap::new();
    let mut changes = Vec::new();
    let schema = ds.schema();
    let fk_targets: Vec<HashMap<usize, usize>> = (0..schema.tables.len())
        .map(|t| schema.resolved_fks(t).into_iter().map(|f| (f.value_index, f.target)).collect())
        .collect();

    let exists = |appended: &HashMap<usize, Vec<Tuple>>, table: usize, id: i64| {
        ds.table(table).contains(id) || appended.get(&table).is_some_and(|v| v.iter().any(|t| t.id == id))
    };
    let check_value = |appended: &HashMap<usize, Vec<Tuple>>, table: usize, col: usize, value: &Cell| {
        let ts = &schema.tables[table];
        let kind = ts.value_kind(col).ok_or(ModificationError::ColumnOutOfRange { table: ts.name.clone(), index: col })?;
        if !value.fits(kind) {
            return Err(ModificationError::KindMismatch { table: ts.name.clone(), col });
        }
        if let Some(&target) = fk_targets[table].get(&col) {
            let v = value.as_int().expect("integer fk");
            if !exists(appended, target, v) {
                return Err(ModificationError::Dangling { table: ts.name.clone(), col, value: v });
            }
        }
        Ok(())
    };

    for m in mods {
        let table = m.table();
        if table >= schema.tables.len() {
            return Err(ModificationError::UnknownTable(table));
        }
        let ts = &schema.tables[table];
        match m {
            Modification::AppendTuple { values, .. } => {
                if values.len() != ts.value_count() {
                    return Err(ModificationError::ValueCount { expected: ts.value_count(), got: values.len() });
                }
                for (col, v) in values.iter().enumerate() {
                    check_value(&appended, table, col, v)?;
                }
                let pending = appended.entry(table).or_default();
                let id = pending.last().map_or_else(|| ds.table(table).next_id(), |t| t.id + 1);
                let tuple = Tuple { id, values: values.clone() };
                pending.push(tuple.clone());
                changes.push(Change::Append { table, tuple });
            }
            Modification::DeleteValues { tuple_ids, col_indexes, .. }
            | Modification::InsertValues { tuple_ids, col_indexes, .. }
            | Modification::ReplaceValues { tuple_ids, col_indexes, .. } => {
                if tuple_ids.is_empty() || col_indexes.is_empty() {
                    return Err(ModificationError::Empty);
                }
                let values = match m {
                    Modification::InsertValues { values, .. } | Modification::ReplaceValues { values, .. } => {
                        if values.len() != col_indexes.len() {
                            return Err(ModificationError::ValueCount { expected: col_indexes.len(), got: values.len() });
                        }
                        for (col, v) in col_indexes.iter().zip(values) {
                            check_value(&appended, table, *col, v)?;
                        }
                        Some(values)
                    }
                    _ => None,
                };
                for &tuple in tuple_ids {
                    let current_tuple = ds
                        .table(table)
                        .get(tuple)
                        .or_else(|| appended.get(&table).and_then(|v| v.iter().find(|t| t.id == tuple)));
                    let Some(current_tuple) = current_tuple else {
                        return Err(ModificationError::UnknownTuple { table: ts.name.clone(), tuple });
                    };
                    for (k, &col) in col_indexes.iter().enumerate() {
                        if col >= ts.value_count() {
                            return Err(ModificationError::ColumnOutOfRange { table: ts.name.clone(), index: col });
                        }
                        let old = overlay
                            .get(&(table, tuple, col))
                            .cloned()
                            .unwrap_or_else(|| current_tuple.values[col].clone());
                        let state_err = |reason| ModificationError::CellState { table: ts.name.clone(), tuple, col, reason };
                        let new = match m {
                            Modification::DeleteValues { .. } => {
                                if old.is_empty() {
                                    return Err(state_err("cell is already empty"));
                                }
                                Cell::Empty
                            }
                            Modification::InsertValues { .. } => {
                                if !old.is_empty() {
                                    return Err(state_err("insert needs an empty cell"));
                                }
                                values.expect("insert values")[k].clone()
                            }
                            _ => {
                                if old.is_empty() {
                                    return Err(state_err("replace needs a filled cell"));
                                }
                                values.expect("replace values")[k].clone()
                            }
                        };
                        overlay.insert((table, tuple, col), new.clone());
                        changes.push(Change::Cell(CellChange { table, tuple, col, old, new }));
                    }
                }
            }
        }
    }
    Ok(ChangeSet { changes })
}

/// One applied modification as written to the journal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalRecord {
    pub op: String,
    #[serde(rename = "tableID")]
    pub table_id: String,
    #[serde(rename = "tupleIDs")]
    pub tuple_ids: Vec<i64>,
    #[serde(rename = "colIndexes")]
    pub col_indexes: Vec<usize>,
    pub values: Vec<Cell>,
    #[serde(rename = "toolName")]
    pub tool_name: String,
    pub step: u64,
}

impl JournalRecord {
    /// `appended` is the key assigned to an appended tuple.
    pub fn new(ds: &Dataset, m: &Modification, appended: Option<i64>, tool: &str, step: u64) -> Self {
        let table_id = ds.schema().tables[m.table()].name.clone();
        let (tuple_ids, col_indexes, values) = match m {
            Modification::DeleteValues { tuple_ids, col_indexes, .. } => (tuple_ids.clone(), col_indexes.clone(), vec![]),
            Modification::InsertValues { tuple_ids, col_indexes, values, .. }
            | Modification::ReplaceValues { tuple_ids, col_indexes, values, .. } => {
                (tuple_ids.clone(), col_indexes.clone(), values.clone())
            }
            Modification::AppendTuple { values, .. } => {
                (appended.into_iter().collect(), (0..values.len()).collect(), values.clone())
            }
        };
        JournalRecord { op: m.op_name().to_string(), table_id, tuple_ids, col_indexes, values, tool_name: tool.to_string(), step }
    }

    pub fn to_modification(&self, ds: &Dataset) -> Result<Modification, DataError> {
        let table = ds
            .table_index(&self.table_id)
            .ok_or_else(|| DataError::SchemaParse(format!("journal names unknown table `{}`", self.table_id)))?;
        let (tuple_ids, col_indexes, values) = (self.tuple_ids.clone(), self.col_indexes.clone(), self.values.clone());
        Ok(match self.op.as_str() {
            "DeleteValues" => Modification::DeleteValues { table, tuple_ids, col_indexes },
            "InsertValues" => Modification::InsertValues { table, tuple_ids, col_indexes, values },
            "ReplaceValues" => Modification::ReplaceValues { table, tuple_ids, col_indexes, values },
            "AppendTuple" => Modification::AppendTuple { table, values },
            other => return Err(DataError::SchemaParse(format!("unknown journal op `{other}`"))),
        })
    }
}

pub fn write_journal<W: std::io::Write>(records: &[JournalRecord], mut out: W) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_journal<R: std::io::BufRead>(input: R) -> Result<Vec<JournalRecord>, DataError> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(|e| DataError::SchemaParse(format!("journal line {}: {e}", n + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| DataError::SchemaParse(format!("journal line {}: {e}", n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

/// Re-applies journal records in order. Each record is resolved on its own,
/// so a record that only makes sense mid-batch (an insert after a delete)
/// still replays because the delete came before it.
pub fn replay(ds: &mut Dataset, records: &[JournalRecord]) -> Result<(), crate::error::Error> {
    for r in records {
        let m = r.to_modification(ds)?;
        let cs = resolve(ds, std::slice::from_ref(&m))?;
        cs.apply_to(ds);
    }
    Ok(())
}
