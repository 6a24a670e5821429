//! Synthetic schemas and datasets for tests, benchmarks and demos.

use rand::Rng;

use crate::dataset::{Cell, Dataset, Table, Tuple};
use crate::rng::seeded;
use crate::scaler::TableSizes;
use crate::schema::{ColumnDef, ColumnKind, DatasetSchema, ForeignKeyDef, PairwiseBinding, TableSchema};

pub fn table(name: &str, fks: &[(&str, &str)], attrs: &[(&str, ColumnKind)]) -> TableSchema {
    let mut columns = vec![ColumnDef { name: "id".into(), kind: ColumnKind::Integer }];
    columns.extend(fks.iter().map(|(c, _)| ColumnDef { name: (*c).into(), kind: ColumnKind::Integer }));
    columns.extend(attrs.iter().map(|(c, k)| ColumnDef { name: (*c).into(), kind: *k }));
    TableSchema {
        name: name.into(),
        columns,
        primary_key: "id".into(),
        foreign_keys: fks.iter().map(|(c, t)| ForeignKeyDef { column: (*c).into(), references: (*t).into() }).collect(),
    }
}

pub fn binding(users: &str, posts: &str, responses: &str) -> PairwiseBinding {
    PairwiseBinding {
        user_table: users.into(),
        post_table: posts.into(),
        response_table: responses.into(),
        post_owner_column: "owner".into(),
        response_post_column: "post".into(),
        response_user_column: "user".into(),
    }
}

/// Users, posts, responses, likes, shares and response annotations. The
/// response-like tables share their references, so all three features
/// overlap on them.
pub fn social_schema() -> DatasetSchema {
    DatasetSchema {
        tables: vec![
            table("U", &[], &[("name", ColumnKind::Text)]),
            table("P", &[("owner", "U")], &[("topic", ColumnKind::Integer)]),
            table("R", &[("user", "U"), ("post", "P")], &[]),
            table("L", &[("user", "U"), ("post", "P")], &[]),
            table("S", &[("user", "U"), ("post", "P")], &[]),
            table("A", &[("r", "R")], &[("score", ColumnKind::Integer)]),
        ],
        pairwise_bindings: vec![binding("U", "P", "R")],
    }
}

/// Users, posts and responses bound for the pairwise tool, plus `extra`
/// tables each referencing one or two earlier tables.
pub fn random_schema(seed: u64, extra: usize) -> DatasetSchema {
    let mut rng = seeded(seed, "schema");
    let mut tables = vec![
        table("U", &[], &[("name", ColumnKind::Text)]),
        table("P", &[("owner", "U")], &[]),
        table("R", &[("user", "U"), ("post", "P")], &[("score", ColumnKind::Integer)]),
    ];
    for i in 0..extra {
        let name = format!("X{i}");
        let earlier: Vec<String> = tables.iter().map(|t| t.name.clone()).collect();
        let first = rng.random_range(0..earlier.len());
        let mut refs = vec![earlier[first].clone()];
        if earlier.len() > 1 && rng.random_bool(0.5) {
            let mut second = rng.random_range(0..earlier.len() - 1);
            if second >= first {
                second += 1;
            }
            refs.push(earlier[second].clone());
        }
        let cols: Vec<String> = (0..refs.len()).map(|j| format!("f{j}")).collect();
        let fks: Vec<(&str, &str)> = cols.iter().zip(&refs).map(|(c, r)| (c.as_str(), r.as_str())).collect();
        tables.push(table(&name, &fks, &[("v", ColumnKind::Integer)]));
    }
    DatasetSchema { tables, pairwise_bindings: vec![binding("U", "P", "R")] }
}

/// Dense keys 1..=n per table. Foreign keys favour small keys more strongly
/// as `skew` grows; zero gives uniform references.
pub fn random_dataset(schema: &DatasetSchema, sizes: &TableSizes, seed: u64, skew: f64) -> Dataset {
    let mut tables = Vec::new();
    for (ti, ts) in schema.tables.iter().enumerate() {
        let n = sizes.get(&ts.name).copied().unwrap_or(0) as i64;
        let fks = schema.resolved_fks(ti);
        let kinds: Vec<ColumnKind> = ts.value_columns().map(|c| c.kind).collect();
        let mut rng = seeded(seed, &ts.name);
        let mut rows = Vec::with_capacity(n as usize);
        for id in 1..=n {
            let values = kinds
                .iter()
                .enumerate()
                .map(|(col, kind)| {
                    if let Some(fk) = fks.iter().find(|fk| fk.value_index == col) {
                        let m = sizes.get(&schema.tables[fk.target].name).copied().unwrap_or(0) as f64;
                        let u: f64 = rng.random();
                        Cell::Int(((u.powf(1.0 + skew) * m) as i64 + 1).min(m as i64))
                    } else {
                        match kind {
                            ColumnKind::Integer => Cell::Int(rng.random_range(0..10)),
                            ColumnKind::Text => Cell::Text(format!("t{}", rng.random_range(0..100))),
                        }
                    }
                })
                .collect();
            rows.push(Tuple { id, values });
        }
        tables.push(Table::new(ts.name.clone(), rows));
    }
    Dataset::new(schema.clone(), tables)
}

/// Sizes drawn log-uniformly from `lo..=hi`, in schema order.
pub fn random_sizes(schema: &DatasetSchema, seed: u64, lo: u64, hi: u64) -> TableSizes {
    let mut rng = seeded(seed, "sizes");
    let (a, b) = ((lo as f64).ln(), (hi as f64).ln());
    schema
        .tables
        .iter()
        .map(|t| (t.name.clone(), (rng.random_range(a..=b)).exp().round().clamp(lo as f64, hi as f64) as u64))
        .collect()
}
