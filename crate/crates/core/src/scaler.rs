//! Size-only scaling: random foreign keys, resampled attribute values.

use std::collections::BTreeMap;

use rand::Rng;

use crate::dataset::{Cell, Dataset, Table, Tuple};
use crate::error::ScaleError;
use crate::rng::seeded;

/// Target tuple count per table name.
pub type TableSizes = BTreeMap<String, u64>;

/// Produces a dataset with exactly the requested table sizes. Keys run
/// 1..=n, each foreign key is uniform over the referenced table's keys and
/// other cells are drawn from the source column. Each table uses its own
/// random stream so the result does not depend on table order.
pub fn rand_scale(source: &Dataset, sizes: &TableSizes, seed: u64) -> Result<Dataset, ScaleError> {
    let schema = source.schema();
    for name in sizes.keys() {
        if schema.table_index(name).is_none() {
            return Err(ScaleError::UnknownTable(name.clone()));
        }
    }
    let size_of = |name: &str| sizes.get(name).copied().ok_or_else(|| ScaleError::MissingSize(name.to_string()));
    let mut tables = Vec::with_capacity(schema.tables.len());
    for (ti, ts) in schema.tables.iter().enumerate() {
        let n = size_of(&ts.name)?;
        let fks = schema.resolved_fks(ti);
        let mut fk_range = BTreeMap::new();
        for fk in &fks {
            let target = &schema.tables[fk.target].name;
            let m = size_of(target)?;
            if n > 0 && m == 0 {
                return Err(ScaleError::InfeasibleTarget { table: ts.name.clone(), references: target.clone(), size: n });
            }
            fk_range.insert(fk.value_index, m as i64);
        }
        let src = source.table(ti);
        let kinds: Vec<_> = ts.value_columns().map(|c| c.kind).collect();
        let mut rng = seeded(seed, &ts.name);
        let mut rows = Vec::with_capacity(n as usize);
        for id in 1..=n as i64 {
            let values = kinds
                .iter()
                .enumerate()
                .map(|(col, kind)| {
                    if let Some(&m) = fk_range.get(&col) {
                        Cell::Int(rng.random_range(1..=m))
                    } else if src.is_empty() {
                        Cell::default_for(*kind)
                    } else {
                        src.rows()[rng.random_range(0..src.len())].values[col].clone()
                    }
                })
                .collect();
            rows.push(Tuple { id, values });
        }
        tables.push(Table::new(ts.name.clone(), rows));
    }
    Ok(Dataset::new(schema.clone(), tables))
}

pub fn read_sizes(text: &str) -> Result<TableSizes, serde_json::Error> {
    serde_json::from_str(text)
}
