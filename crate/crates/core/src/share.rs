//! Share of a table's tuples holding one value in one column. Small enough
//! to set up conflicting targets between two tools.

use crate::coordinator::Session;
use crate::dataset::{Cell, Dataset};
use crate::error::{CoordError, FeatureError};
use crate::feature::{FeatureKind, FeatureSnapshot, FeatureState, TweakingTool};
use crate::modification::{Change, Modification};

#[derive(Debug, Clone)]
pub struct ShareState {
    table: usize,
    col: usize,
    value: Cell,
    min_share: f64,
    matching: u64,
    total: u64,
}

impl ShareState {
    pub fn share(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.matching as f64 / self.total as f64
        }
    }

    fn count(&mut self, cell: &Cell, up: bool) {
        if *cell == self.value {
            if up {
                self.matching += 1;
            } else {
                self.matching -= 1;
            }
        }
    }

    fn step(&mut self, change: &Change, backwards: bool) {
        match change {
            Change::Cell(cc) if cc.table == self.table && cc.col == self.col => {
                let (gone, came) = if backwards { (&cc.new, &cc.old) } else { (&cc.old, &cc.new) };
                self.count(gone, false);
                self.count(came, true);
            }
            Change::Append { table, tuple } if *table == self.table => {
                let cell = tuple.values[self.col].clone();
                self.count(&cell, !backwards);
                if backwards {
                    self.total -= 1;
                } else {
                    self.total += 1;
                }
            }
            _ => {}
        }
    }
}

impl FeatureState for ShareState {
    fn watches(&self, table: usize) -> bool {
        table == self.table
    }

    fn apply(&mut self, change: &Change) {
        self.step(change, false);
    }

    fn revert(&mut self, change: &Change) {
        self.step(change, true);
    }

    /// How far the share falls short of the minimum.
    fn error(&self) -> f64 {
        (self.min_share - self.share()).max(0.0)
    }
}

/// Raises the share of `value` in one column to at least `min_share` by
/// replacing other values.
pub struct ValueShareTool {
    name: String,
    table: String,
    column: String,
    value: Cell,
    min_share: f64,
    state: Option<ShareState>,
}

impl ValueShareTool {
    pub fn new(name: impl Into<String>, table: impl Into<String>, column: impl Into<String>, value: Cell, min_share: f64) -> Self {
        ValueShareTool { name: name.into(), table: table.into(), column: column.into(), value, min_share, state: None }
    }

    fn locate(&self, ds: &Dataset) -> Result<(usize, usize), FeatureError> {
        let t = ds.table_index(&self.table).ok_or_else(|| FeatureError::UnknownTable(self.table.clone()))?;
        let c = ds.schema().tables[t]
            .value_index(&self.column)
            .ok_or_else(|| FeatureError::ShapeMismatch(format!("`{}` has no column `{}`", self.table, self.column)))?;
        Ok((t, c))
    }

    fn build(&self, ds: &Dataset) -> ShareState {
        let (table, col) = self.locate(ds).expect("column resolves");
        let rows = ds.table(table).rows();
        ShareState {
            table,
            col,
            value: self.value.clone(),
            min_share: self.min_share,
            matching: rows.iter().filter(|r| r.values[col] == self.value).count() as u64,
            total: rows.len() as u64,
        }
    }
}

impl TweakingTool for ValueShareTool {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> FeatureKind {
        FeatureKind::Share
    }

    fn calculate(&mut self, ds: &Dataset) {
        self.state = Some(self.build(ds));
    }

    fn state(&mut self) -> &mut dyn FeatureState {
        self.state.as_mut().expect("calculated before use")
    }

    fn error(&self) -> f64 {
        self.state.as_ref().map_or(0.0, FeatureState::error)
    }

    fn instance_errors(&self) -> Vec<(String, f64)> {
        vec![(format!("{}.{}", self.table, self.column), self.error())]
    }

    fn prepare(&mut self, ds: &Dataset) -> Result<Vec<String>, CoordError> {
        let (t, c) = self.locate(ds)?;
        if !self.value.fits(ds.schema().tables[t].value_kind(c).expect("resolved")) {
            return Err(CoordError::TargetInfeasible { tool: self.name.clone(), violations: vec![format!("{} does not fit `{}`", self.value, self.column)] });
        }
        Ok(Vec::new())
    }

    fn tweak(&mut self, session: &mut Session<'_>) -> Result<(), CoordError> {
        let (table, col) = self.locate(session.dataset())?;
        let others: Vec<i64> = session.dataset().table(table).rows().iter().filter(|r| r.values[col] != self.value).map(|r| r.id).collect();
        for id in others {
            if self.error() == 0.0 {
                break;
            }
            let mods = [Modification::replace_one(table, id, col, self.value.clone())];
            let state = self.state.as_mut().expect("calculated");
            while !session.submit(state, &mods)? {
                session.relax()?;
            }
        }
        Ok(())
    }

    fn snapshot(&self) -> FeatureSnapshot {
        FeatureSnapshot::Share(self.state.as_ref().map(|s| vec![s.share()]).unwrap_or_default())
    }

    fn fresh_snapshot(&self, ds: &Dataset) -> FeatureSnapshot {
        FeatureSnapshot::Share(vec![self.build(ds).share()])
    }

    fn fresh_error(&self, ds: &Dataset) -> f64 {
        self.build(ds).error()
    }
}
