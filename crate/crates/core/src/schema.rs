//! Table, column and foreign-key declarations.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::DataError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Integer,
    Text,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    pub kind: ColumnKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForeignKeyDef {
    pub column: String,
    pub references: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TableSchema {
    pub name: String,
    pub columns: Vec<ColumnDef>,
    pub primary_key: String,
    #[serde(default)]
    pub foreign_keys: Vec<ForeignKeyDef>,
}

/// Declares which tables play the user / post / response roles for the
/// pairwise tool.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PairwiseBinding {
    pub user_table: String,
    pub post_table: String,
    pub response_table: String,
    pub post_owner_column: String,
    pub response_post_column: String,
    pub response_user_column: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DatasetSchema {
    pub tables: Vec<TableSchema>,
    #[serde(default)]
    pub pairwise_bindings: Vec<PairwiseBinding>,
}

/// A foreign key resolved to positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResolvedFk {
    /// Index into the table's value columns.
    pub value_index: usize,
    /// Index of the referenced table in the schema.
    pub target: usize,
}

impl TableSchema {
    pub fn key_position(&self) -> usize {
        self.columns
            .iter()
            .position(|c| c.name == self.primary_key)
            .expect("validated schema has its key column")
    }

    /// Non-key columns in declared order. Modification column indexes refer to
    /// positions in this list.
    pub fn value_columns(&self) -> impl Iterator<Item = &ColumnDef> {
        self.columns.iter().filter(move |c| c.name != self.primary_key)
    }

    pub fn value_count(&self) -> usize {
        self.columns.len() - 1
    }

    pub fn value_index(&self, column: &str) -> Option<usize> {
        self.value_columns().position(|c| c.name == column)
    }

    pub fn value_kind(&self, index: usize) -> Option<ColumnKind> {
        self.value_columns().nth(index).map(|c| c.kind)
    }

    pub fn is_fk_column(&self, column: &str) -> bool {
        self.foreign_keys.iter().any(|fk| fk.column == column)
    }
}

impl DatasetSchema {
    pub fn from_json_str(text: &str) -> Result<Self, DataError> {
        let schema: DatasetSchema =
            serde_json::from_str(text).map_err(|e| DataError::SchemaParse(e.to_string()))?;
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        let schema = Self::from_json_str(&text)?;
        schema.validate(false)?;
        Ok(schema)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    pub fn table_index(&self, name: &str) -> Option<usize> {
        self.tables.iter().position(|t| t.name == name)
    }

    pub fn table(&self, name: &str) -> Option<&TableSchema> {
        self.tables.iter().find(|t| t.name == name)
    }

    /// Checks structural well-formedness. More than one foreign key between
    /// the same pair of tables is rejected unless `allow_parallel_fks`.
    pub fn validate(&self, allow_parallel_fks: bool) -> Result<(), DataError> {
        let bad = |msg: String| Err(DataError::SchemaParse(msg));
        let mut names = BTreeSet::new();
        for t in &self.tables {
            if !names.insert(t.name.as_str()) {
                return bad(format!("duplicate table `{}`", t.name));
            }
            let mut cols = BTreeSet::new();
            for c in &t.columns {
                if !cols.insert(c.name.as_str()) {
                    return bad(format!("duplicate column `{}.{}`", t.name, c.name));
                }
            }
            match t.columns.iter().find(|c| c.name == t.primary_key) {
                None => return bad(format!("table `{}` lacks key column `{}`", t.name, t.primary_key)),
                Some(c) if c.kind != ColumnKind::Integer => {
                    return bad(format!("key column `{}.{}` must be integer", t.name, c.name))
                }
                _ => {}
            }
            let mut pairs: BTreeMap<&str, usize> = BTreeMap::new();
            for fk in &t.foreign_keys {
                let Some(col) = t.columns.iter().find(|c| c.name == fk.column) else {
                    return bad(format!("foreign key column `{}.{}` not declared", t.name, fk.column));
                };
                if col.kind != ColumnKind::Integer {
                    return bad(format!("foreign key column `{}.{}` must be integer", t.name, fk.column));
                }
                if fk.column == t.primary_key {
                    return bad(format!("key column `{}.{}` cannot be a foreign key", t.name, fk.column));
                }
                if self.table(&fk.references).is_none() {
                    return bad(format!("`{}.{}` references unknown table `{}`", t.name, fk.column, fk.references));
                }
                *pairs.entry(fk.references.as_str()).or_default() += 1;
            }
            if !allow_parallel_fks {
                if let Some((target, _)) = pairs.iter().find(|(_, n)| **n > 1) {
                    return bad(format!(
                        "table `{}` has several foreign keys to `{}`; pass the parallel-key override to accept",
                        t.name, target
                    ));
                }
            }
        }
        for b in &self.pairwise_bindings {
            self.check_binding(b).map_err(DataError::SchemaParse)?;
        }
        Ok(())
    }

    fn check_binding(&self, b: &PairwiseBinding) -> Result<(), String> {
        self.table(&b.user_table).ok_or(format!("unknown user table `{}`", b.user_table))?;
        let post = self.table(&b.post_table).ok_or(format!("unknown post table `{}`", b.post_table))?;
        let resp = self
            .table(&b.response_table)
            .ok_or(format!("unknown response table `{}`", b.response_table))?;
        let refers = |t: &TableSchema, col: &str, target: &str| {
            t.foreign_keys.iter().any(|fk| fk.column == col && fk.references == target)
        };
        if !refers(post, &b.post_owner_column, &b.user_table) {
            return Err(format!("`{}.{}` must reference `{}`", b.post_table, b.post_owner_column, b.user_table));
        }
        if !refers(resp, &b.response_post_column, &b.post_table) {
            return Err(format!(
                "`{}.{}` must reference `{}`",
                b.response_table, b.response_post_column, b.post_table
            ));
        }
        if !refers(resp, &b.response_user_column, &b.user_table) {
            return Err(format!(
                "`{}.{}` must reference `{}`",
                b.response_table, b.response_user_column, b.user_table
            ));
        }
        Ok(())
    }

    /// Foreign keys of table `t` resolved to value positions and target tables.
    pub fn resolved_fks(&self, t: usize) -> Vec<ResolvedFk> {
        let table = &self.tables[t];
        table
            .foreign_keys
            .iter()
            .map(|fk| ResolvedFk {
                value_index: table.value_index(&fk.column).expect("validated"),
                target: self.table_index(&fk.references).expect("validated"),
            })
            .collect()
    }
}
