use std::collections::{BTreeMap, HashMap};

use crate::dataset::{Cell, Dataset};
use crate::error::FeatureError;
use crate::feature::FeatureState;
use crate::modification::Change;

use super::dist::{CoappearDistribution, CoappearGroup};

/// One group's distribution kept current under edits.
#[derive(Debug, Clone)]
pub(crate) struct GroupState {
    pub group: CoappearGroup,
    pub referencing: Vec<usize>,
    pub referenced: Vec<usize>,
    pub cols: Vec<Vec<usize>>,
    /// Per referencing table: tuple -> its key cells.
    pub keys: Vec<HashMap<i64, Vec<Option<i64>>>>,
    pub combos: HashMap<Vec<i64>, Vec<u32>>,
    pub dist: HashMap<Vec<u32>, u64>,
    nonzero: u64,
    pub ref_sizes: Vec<u64>,
    pub target: Option<CoappearDistribution>,
    /// Sum over nonzero vectors of |current - target|.
    diff: u64,
}

impl GroupState {
    pub fn build(ds: &Dataset, group: &CoappearGroup, target: Option<CoappearDistribution>) -> Result<Self, FeatureError> {
        let schema = ds.schema();
        let cols = group.fk_value_indexes(schema)?;
        let idx = |t: &String| schema.table_index(t).ok_or_else(|| FeatureError::UnknownTable(t.clone()));
        let referencing = group.referencing.iter().map(idx).collect::<Result<Vec<_>, _>>()?;
        let referenced = group.referenced.iter().map(idx).collect::<Result<Vec<_>, _>>()?;
        let mut s = GroupState {
            group: group.clone(),
            ref_sizes: referenced.iter().map(|&t| ds.table(t).len() as u64).collect(),
            keys: vec![HashMap::new(); referencing.len()],
            referencing,
            referenced,
            cols,
            combos: HashMap::new(),
            dist: HashMap::new(),
            nonzero: 0,
            target: None,
            diff: 0,
        };
        for i in 0..s.referencing.len() {
            for row in ds.table(s.referencing[i]).rows() {
                let key: Vec<Option<i64>> = s.cols[i].iter().map(|&c| row.values[c].as_int()).collect();
                s.add_key(i, &key, 1);
                s.keys[i].insert(row.id, key);
            }
        }
        s.set_target(target);
        Ok(s)
    }

    pub fn set_target(&mut self, target: Option<CoappearDistribution>) {
        self.target = target;
        self.diff = 0;
        let mut keys: Vec<&Vec<u32>> = self.dist.keys().collect();
        if let Some(t) = &self.target {
            keys.extend(t.entries.keys().filter(|v| !self.dist.contains_key(*v)));
        }
        for v in keys {
            let cur = self.dist.get(v).copied().unwrap_or(0);
            self.diff += cur.abs_diff(self.target_mass(v));
        }
    }

    fn target_mass(&self, v: &[u32]) -> u64 {
        self.target.as_ref().map_or(0, |t| t.get(v))
    }

    pub fn combinations(&self) -> u64 {
        self.ref_sizes.iter().fold(1u64, |a, &b| a.saturating_mul(b))
    }

    fn bump(&mut self, v: &[u32], up: bool) {
        if v.iter().all(|&x| x == 0) {
            return;
        }
        let t = self.target_mass(v);
        let cur = self.dist.get(v).copied().unwrap_or(0);
        let new = if up { cur + 1 } else { cur - 1 };
        self.diff = self.diff - cur.abs_diff(t) + new.abs_diff(t);
        if up {
            self.nonzero += 1;
        } else {
            self.nonzero -= 1;
        }
        if new == 0 {
            self.dist.remove(v);
        } else {
            self.dist.insert(v.to_vec(), new);
        }
    }

    fn add_key(&mut self, i: usize, key: &[Option<i64>], delta: i32) {
        let Some(combo) = key.iter().copied().collect::<Option<Vec<i64>>>() else { return };
        let k = self.referencing.len();
        let old = self.combos.get(&combo).cloned().unwrap_or_else(|| vec![0; k]);
        let mut new = old.clone();
        new[i] = (new[i] as i32 + delta) as u32;
        self.bump(&old, false);
        self.bump(&new, true);
        if new.iter().all(|&x| x == 0) {
            self.combos.remove(&combo);
        } else {
            self.combos.insert(combo, new);
        }
    }

    pub fn watches(&self, table: usize) -> bool {
        self.referencing.contains(&table) || self.referenced.contains(&table)
    }

    pub fn step(&mut self, change: &Change, backwards: bool) {
        match change {
            Change::Cell(cc) => {
                let Some(i) = self.referencing.iter().position(|&t| t == cc.table) else { return };
                let Some(j) = self.cols[i].iter().position(|&c| c == cc.col) else { return };
                let value = if backwards { &cc.old } else { &cc.new };
                let Some(mut key) = self.keys[i].get(&cc.tuple).cloned() else { return };
                self.add_key(i, &key, -1);
                key[j] = value.as_int();
                self.add_key(i, &key, 1);
                self.keys[i].insert(cc.tuple, key);
            }
            Change::Append { table, tuple } => {
                if let Some(j) = self.referenced.iter().position(|t| t == table) {
                    if backwards {
                        self.ref_sizes[j] -= 1;
                    } else {
                        self.ref_sizes[j] += 1;
                    }
                }
                if let Some(i) = self.referencing.iter().position(|t| t == table) {
                    if backwards {
                        let key = self.keys[i].remove(&tuple.id).expect("appended tuple tracked");
                        self.add_key(i, &key, -1);
                    } else {
                        let key: Vec<Option<i64>> = self.cols[i].iter().map(|&c| tuple.values[c].as_int()).collect();
                        self.add_key(i, &key, 1);
                        self.keys[i].insert(tuple.id, key);
                    }
                }
            }
        }
    }

    pub fn error(&self) -> f64 {
        let Some(t) = &self.target else { return 0.0 };
        let n = self.combinations();
        if n == 0 {
            return 0.0;
        }
        let zero_cur = n.saturating_sub(self.nonzero);
        let zero_tgt = t.zero_mass_for(n);
        (self.diff + zero_cur.abs_diff(zero_tgt)) as f64 / n as f64
    }

    pub fn distribution(&self) -> CoappearDistribution {
        let entries: BTreeMap<Vec<u32>, u64> = self.dist.iter().map(|(v, m)| (v.clone(), *m)).collect();
        CoappearDistribution {
            group: self.group.clone(),
            entries,
            zero_mass: Some(self.combinations().saturating_sub(self.nonzero)),
        }
    }
}

/// Distributions of several groups with their targets.
#[derive(Debug, Clone)]
pub struct CoappearState {
    pub(crate) groups: Vec<GroupState>,
}

impl CoappearState {
    pub fn build(ds: &Dataset, groups: &[CoappearGroup], targets: &[Option<CoappearDistribution>]) -> Result<Self, FeatureError> {
        let groups = groups
            .iter()
            .zip(targets)
            .map(|(g, t)| GroupState::build(ds, g, t.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(CoappearState { groups })
    }

    pub fn distributions(&self) -> Vec<CoappearDistribution> {
        self.groups.iter().map(GroupState::distribution).collect()
    }

    pub fn group_errors(&self) -> Vec<f64> {
        self.groups.iter().map(GroupState::error).collect()
    }
}

impl FeatureState for CoappearState {
    fn watches(&self, table: usize) -> bool {
        self.groups.iter().any(|g| g.watches(table))
    }

    fn apply(&mut self, change: &Change) {
        for g in &mut self.groups {
            if g.watches(change.table()) {
                g.step(change, false);
            }
        }
    }

    fn revert(&mut self, change: &Change) {
        for g in &mut self.groups {
            if g.watches(change.table()) {
                g.step(change, true);
            }
        }
    }

    fn error(&self) -> f64 {
        let with_target: Vec<f64> = self.groups.iter().filter(|g| g.target.is_some()).map(GroupState::error).collect();
        if with_target.is_empty() {
            0.0
        } else {
            with_target.iter().sum::<f64>() / with_target.len() as f64
        }
    }
}

pub(crate) fn key_cells(combo: &[i64]) -> Vec<Cell> {
    combo.iter().map(|&v| Cell::Int(v)).collect()
}
