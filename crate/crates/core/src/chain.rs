//! Maximal reference chains in the foreign-key graph.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::DataError;
use crate::schema::DatasetSchema;

/// Tables of a chain listed from the root (references nothing) to the
/// deepest referencing table. `fk_columns[i]` is the column of `tables[i + 1]`
/// that references `tables[i]`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ReferenceChain {
    pub tables: Vec<String>,
    pub fk_columns: Vec<String>,
}

impl ReferenceChain {
    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }
}

impl fmt::Display for ReferenceChain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.tables.iter().rev().enumerate() {
            if i > 0 {
                f.write_str(" -> ")?;
            }
            f.write_str(t)?;
        }
        Ok(())
    }
}

/// Every path from a table nobody references down to a table that
/// references nothing, with at least two tables. Sorted by table names.
pub fn enumerate_maximal_chains(schema: &DatasetSchema) -> Result<Vec<ReferenceChain>, DataError> {
    let n = schema.tables.len();
    // edges[t] = (column, target) for each foreign key of t
    let edges: Vec<Vec<(String, usize)>> = schema
        .tables
        .iter()
        .map(|t| {
            t.foreign_keys
                .iter()
                .map(|fk| (fk.column.clone(), schema.table_index(&fk.references).expect("validated")))
                .collect()
        })
        .collect();
    check_acyclic(schema, &edges)?;

    let mut referenced = vec![false; n];
    for e in &edges {
        for (_, t) in e {
            referenced[*t] = true;
        }
    }
    let mut chains = Vec::new();
    for start in 0..n {
        if referenced[start] || edges[start].is_empty() {
            continue;
        }
        let mut path = vec![(start, String::new())];
        walk(schema, &edges, &mut path, &mut chains);
    }
    chains.sort();
    Ok(chains)
}

fn walk(
    schema: &DatasetSchema,
    edges: &[Vec<(String, usize)>],
    path: &mut Vec<(usize, String)>,
    out: &mut Vec<ReferenceChain>,
) {
    let last = path.last().expect("nonempty").0;
    if edges[last].is_empty() {
        let tables = path.iter().rev().map(|(t, _)| schema.tables[*t].name.clone()).collect();
        // path[i].1 is the column of path[i - 1] that references path[i]
        let fk_columns = (1..path.len()).rev().map(|i| path[i].1.clone()).collect();
        out.push(ReferenceChain { tables, fk_columns });
        return;
    }
    for (col, next) in &edges[last] {
        path.push((*next, col.clone()));
        walk(schema, edges, path, out);
        path.pop();
    }
}

fn check_acyclic(schema: &DatasetSchema, edges: &[Vec<(String, usize)>]) -> Result<(), DataError> {
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut state = vec![0u8; edges.len()];
    fn visit(v: usize, edges: &[Vec<(String, usize)>], state: &mut [u8]) -> Option<usize> {
        state[v] = 1;
        for (_, w) in &edges[v] {
            match state[*w] {
                1 => return Some(*w),
                0 => {
                    if let Some(c) = visit(*w, edges, state) {
                        return Some(c);
                    }
                }
                _ => {}
            }
        }
        state[v] = 2;
        None
    }
    for v in 0..edges.len() {
        if state[v] == 0 {
            if let Some(c) = visit(v, edges, &mut state) {
                return Err(DataError::CyclicSchema { table: schema.tables[c].name.clone() });
            }
        }
    }
    Ok(())
}
