#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};

use tweakscale_core::schema::ColumnKind;
use tweakscale_core::synth::{binding, table};
use tweakscale_core::{Cell, CoappearGroup, Dataset, DatasetSchema, PairwiseBinding, Table, Tuple};

/// (key, foreign key values) per tuple.
pub type Rows = Vec<(i64, Vec<i64>)>;

pub fn dataset(schema: DatasetSchema, rows: &[(&str, Rows)]) -> Dataset {
    let tables = schema
        .tables
        .iter()
        .map(|ts| {
            let rows = rows
                .iter()
                .find(|(n, _)| *n == ts.name)
                .map(|(_, r)| r.iter().map(|(id, v)| Tuple { id: *id, values: v.iter().map(|x| Cell::Int(*x)).collect() }).collect())
                .unwrap_or_default();
            Table::new(ts.name.clone(), rows)
        })
        .collect();
    Dataset::new(schema, tables)
}

/// T_D -> T_C -> T_B -> T_A.
pub fn chain_schema() -> DatasetSchema {
    DatasetSchema {
        tables: vec![
            table("A", &[], &[]),
            table("B", &[("a", "A")], &[]),
            table("C", &[("b", "B")], &[]),
            table("D", &[("c", "C")], &[]),
        ],
        pairwise_bindings: vec![],
    }
}

/// a_2 is referenced by b_2, b_3 and indirectly by c_1, c_2, c_3 but by no
/// d; a_3 is reached from every table.
pub fn linear_figure() -> Dataset {
    dataset(
        chain_schema(),
        &[
            ("A", vec![(1, vec![]), (2, vec![]), (3, vec![])]),
            ("B", vec![(1, vec![1]), (2, vec![2]), (3, vec![2]), (4, vec![3]), (5, vec![3])]),
            ("C", vec![(1, vec![2]), (2, vec![3]), (3, vec![3]), (4, vec![4]), (5, vec![5])]),
            ("D", vec![(1, vec![4]), (2, vec![4]), (3, vec![4]), (4, vec![5])]),
        ],
    )
}

pub fn coappear_schema() -> DatasetSchema {
    DatasetSchema {
        tables: vec![
            table("K", &[], &[]),
            table("H", &[], &[]),
            table("TA", &[("k", "K"), ("h", "H")], &[]),
            table("TB", &[("k", "K"), ("h", "H")], &[]),
            table("TC", &[("k", "K"), ("h", "H")], &[]),
        ],
        pairwise_bindings: vec![],
    }
}

/// <k1,h2> three times in TA and TB and once in TC; <k2,h3> and <k3,h1>
/// once in TA and TB and twice in TC.
pub fn coappear_figure() -> Dataset {
    let ta = vec![(1, vec![1, 2]), (2, vec![1, 2]), (3, vec![1, 2]), (4, vec![2, 3]), (5, vec![3, 1])];
    let tb = ta.clone();
    let tc = vec![(1, vec![1, 2]), (2, vec![2, 3]), (3, vec![2, 3]), (4, vec![3, 1]), (5, vec![3, 1])];
    dataset(
        coappear_schema(),
        &[("K", vec![(1, vec![]), (2, vec![]), (3, vec![])]), ("H", vec![(1, vec![]), (2, vec![]), (3, vec![])]), ("TA", ta), ("TB", tb), ("TC", tc)],
    )
}

pub fn pairwise_schema() -> DatasetSchema {
    DatasetSchema {
        tables: vec![
            table("users", &[], &[]),
            table("post", &[("owner", "users")], &[]),
            table("response", &[("user", "users"), ("post", "post")], &[]),
        ],
        pairwise_bindings: vec![binding("users", "post", "response")],
    }
}

/// u1 owns p1, p2 and u2 owns p3; u1 responds twice to p3 and u2 four
/// times to p1 and p2.
pub fn pairwise_figure() -> Dataset {
    dataset(
        pairwise_schema(),
        &[
            ("users", vec![(1, vec![]), (2, vec![])]),
            ("post", vec![(1, vec![1]), (2, vec![1]), (3, vec![2])]),
            (
                "response",
                vec![(1, vec![1, 3]), (2, vec![1, 3]), (3, vec![2, 1]), (4, vec![2, 1]), (5, vec![2, 2]), (6, vec![2, 2])],
            ),
        ],
    )
}

fn fk_lookup(ds: &Dataset, child: &str, parent: &str) -> HashMap<i64, i64> {
    let schema = ds.schema();
    let ts = schema.table(child).unwrap();
    let fk = ts.foreign_keys.iter().find(|f| f.references == parent).unwrap();
    let col = ts.value_index(&fk.column).unwrap();
    ds.table_by_name(child).unwrap().rows().iter().filter_map(|r| r.values[col].as_int().map(|v| (r.id, v))).collect()
}

/// h[j][i] by walking every level-j tuple up to level i.
pub fn oracle_linear(ds: &Dataset, chain: &[&str]) -> Vec<Vec<u64>> {
    let k = chain.len();
    let ups: Vec<HashMap<i64, i64>> = (1..k).map(|l| fk_lookup(ds, chain[l], chain[l - 1])).collect();
    let mut h = vec![Vec::new(); k];
    for j in 0..k {
        h[j] = vec![0; j + 1];
        for i in 0..j {
            let mut roots = BTreeSet::new();
            for t in ds.table_by_name(chain[j]).unwrap().ids() {
                let mut cur = Some(t);
                for l in (i + 1..=j).rev() {
                    cur = cur.and_then(|c| ups[l - 1].get(&c).copied());
                }
                if let Some(r) = cur {
                    if ds.table_by_name(chain[i]).unwrap().contains(r) {
                        roots.insert(r);
                    }
                }
            }
            h[j][i] = roots.len() as u64;
        }
    }
    h
}

/// Coappear vector -> number of key combinations, all-zero vectors left out.
pub fn oracle_coappear(ds: &Dataset, group: &CoappearGroup) -> BTreeMap<Vec<u32>, u64> {
    let k = group.referencing.len();
    let mut per: BTreeMap<Vec<i64>, Vec<u32>> = BTreeMap::new();
    for (i, t) in group.referencing.iter().enumerate() {
        let ts = ds.schema().table(t).unwrap();
        let cols: Vec<usize> = group
            .referenced
            .iter()
            .map(|r| ts.value_index(&ts.foreign_keys.iter().find(|f| &f.references == r).unwrap().column).unwrap())
            .collect();
        for row in ds.table_by_name(t).unwrap().rows() {
            let key: Option<Vec<i64>> = cols.iter().map(|&c| row.values[c].as_int()).collect();
            if let Some(key) = key {
                per.entry(key).or_insert_with(|| vec![0; k])[i] += 1;
            }
        }
    }
    let mut out = BTreeMap::new();
    for v in per.into_values() {
        *out.entry(v).or_insert(0) += 1;
    }
    out
}

/// (pair counts incl. zero cell, self counts incl. zero cell).
pub fn oracle_pairwise(ds: &Dataset, b: &PairwiseBinding) -> (BTreeMap<(u32, u32), u64>, BTreeMap<u32, u64>) {
    let owner = fk_lookup(ds, &b.post_table, &b.user_table);
    let rs = ds.schema().table(&b.response_table).unwrap();
    let (uc, pc) = (rs.value_index(&b.response_user_column).unwrap(), rs.value_index(&b.response_post_column).unwrap());
    let users: Vec<i64> = ds.table_by_name(&b.user_table).unwrap().ids().collect();
    let mut cnt: HashMap<(i64, i64), u32> = HashMap::new();
    for r in ds.table_by_name(&b.response_table).unwrap().rows() {
        if let (Some(u), Some(p)) = (r.values[uc].as_int(), r.values[pc].as_int()) {
            if let Some(&o) = owner.get(&p) {
                *cnt.entry((u, o)).or_insert(0) += 1;
            }
        }
    }
    let mut n = BTreeMap::new();
    let mut s = BTreeMap::new();
    for &u in &users {
        for &v in &users {
            let x = cnt.get(&(u, v)).copied().unwrap_or(0);
            if u == v {
                *s.entry(x).or_insert(0) += 1;
            } else {
                *n.entry((x, cnt.get(&(v, u)).copied().unwrap_or(0))).or_insert(0) += 1;
            }
        }
    }
    (n, s)
}

pub fn int_kind() -> ColumnKind {
    ColumnKind::Integer
}

/// One random valid edit: re-point a foreign key, or append a tuple whose
/// foreign keys hit existing keys.
pub fn random_edit<R: rand::Rng>(ds: &Dataset, rng: &mut R) -> Vec<tweakscale_core::Modification> {
    use tweakscale_core::Modification;
    let schema = ds.schema();
    let n = schema.tables.len();
    let pick = |rng: &mut R, t: usize| -> Option<i64> {
        let rows = ds.table(t).rows();
        (!rows.is_empty()).then(|| rows[rng.random_range(0..rows.len())].id)
    };
    let t = rng.random_range(0..n);
    let fks = schema.resolved_fks(t);
    let append = fks.is_empty() || ds.table(t).is_empty() || rng.random_bool(0.2);
    if append {
        let mut values = Vec::new();
        for (col, c) in schema.tables[t].value_columns().enumerate() {
            match fks.iter().find(|f| f.value_index == col) {
                Some(fk) => match pick(rng, fk.target) {
                    Some(v) => values.push(Cell::Int(v)),
                    None => return Vec::new(),
                },
                None => values.push(Cell::default_for(c.kind)),
            }
        }
        return vec![Modification::AppendTuple { table: t, values }];
    }
    let fk = &fks[rng.random_range(0..fks.len())];
    let (Some(id), Some(v)) = (pick(rng, t), pick(rng, fk.target)) else { return Vec::new() };
    if rng.random_bool(0.5) {
        vec![Modification::replace_one(t, id, fk.value_index, Cell::Int(v))]
    } else {
        Modification::move_cells(t, id, vec![fk.value_index], vec![Cell::Int(v)]).to_vec()
    }
}
