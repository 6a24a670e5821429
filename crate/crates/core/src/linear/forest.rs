//! Chain tuples as a forest with per-node depths, kept current under
//! foreign-key edits.

use std::collections::HashMap;

use crate::chain::ReferenceChain;
use crate::dataset::{Cell, Dataset};
use crate::modification::Change;

use super::matrix::LinearJoinMatrix;

pub(crate) const NONE: u32 = u32::MAX;

#[derive(Debug, Clone, Default)]
pub(crate) struct Level {
    pub ids: Vec<i64>,
    pub pos: HashMap<i64, u32>,
    pub parent: Vec<u32>,
    pub children: Vec<Vec<u32>>,
    /// Deepest level among the node and its descendants.
    pub depth: Vec<u8>,
}

/// A node's depth is the deepest level reached below it. `h[j][i]` counts
/// level-`i` nodes of depth at least `j`.
#[derive(Debug, Clone)]
pub struct ChainForest {
    pub(crate) chain: ReferenceChain,
    pub(crate) tables: Vec<usize>,
    /// Value index of the column in level `l` referencing level `l - 1`.
    pub(crate) fk_cols: Vec<usize>,
    pub(crate) levels: Vec<Level>,
    /// Per level, `k` counters per node: children by depth.
    depth_counts: Vec<Vec<u32>>,
    pub(crate) h: Vec<Vec<u64>>,
}

impl ChainForest {
    pub fn build(ds: &Dataset, chain: &ReferenceChain) -> Self {
        let schema = ds.schema();
        let k = chain.len();
        let tables: Vec<usize> = chain.tables.iter().map(|t| schema.table_index(t).expect("chain table")).collect();
        let mut fk_cols = vec![usize::MAX; k];
        for l in 1..k {
            fk_cols[l] = schema.tables[tables[l]].value_index(&chain.fk_columns[l - 1]).expect("chain column");
        }
        let mut levels: Vec<Level> = Vec::with_capacity(k);
        for (l, &t) in tables.iter().enumerate() {
            let table = ds.table(t);
            let ids: Vec<i64> = table.ids().collect();
            let pos = ids.iter().enumerate().map(|(p, &id)| (id, p as u32)).collect();
            let n = ids.len();
            levels.push(Level {
                ids,
                pos,
                parent: vec![NONE; n],
                children: vec![Vec::new(); n],
                depth: vec![l as u8; n],
            });
        }
        for l in 1..k {
            let table = ds.table(tables[l]);
            for (p, row) in table.rows().iter().enumerate() {
                if let Cell::Int(v) = row.values[fk_cols[l]] {
                    if let Some(&pp) = levels[l - 1].pos.get(&v) {
                        levels[l].parent[p] = pp;
                        levels[l - 1].children[pp as usize].push(p as u32);
                    }
                }
            }
        }
        let mut depth_counts: Vec<Vec<u32>> = levels.iter().map(|lv| vec![0; lv.ids.len() * k]).collect();
        for l in (1..k).rev() {
            let (upper, lower) = levels.split_at_mut(l);
            let below = &lower[0];
            let above = &mut upper[l - 1];
            for p in 0..below.ids.len() {
                let par = below.parent[p];
                if par != NONE {
                    depth_counts[l - 1][par as usize * k + below.depth[p] as usize] += 1;
                }
            }
            for p in 0..above.ids.len() {
                let counts = &depth_counts[l - 1][p * k..(p + 1) * k];
                if let Some(d) = (l..k).rev().find(|&d| counts[d] > 0) {
                    above.depth[p] = d as u8;
                }
            }
        }
        let mut h: Vec<Vec<u64>> = (0..k).map(|j| vec![0; k.max(j + 1)]).collect();
        for (i, lv) in levels.iter().enumerate() {
            for &d in &lv.depth {
                for row in h.iter_mut().take(d as usize + 1).skip(i + 1) {
                    row[i] += 1;
                }
            }
        }
        ChainForest { chain: chain.clone(), tables, fk_cols, levels, depth_counts, h }
    }

    pub fn k(&self) -> usize {
        self.levels.len()
    }

    pub fn chain(&self) -> &ReferenceChain {
        &self.chain
    }

    pub fn matrix(&self) -> LinearJoinMatrix {
        let h = self.h.iter().enumerate().map(|(j, row)| row[..=j].to_vec()).collect();
        LinearJoinMatrix { chain: self.chain.tables.clone(), h }
    }

    pub(crate) fn rows(&self) -> &[Vec<u64>] {
        &self.h
    }

    pub(crate) fn level_of(&self, table: usize) -> Option<usize> {
        self.tables.iter().position(|&t| t == table)
    }

    pub fn watches(&self, table: usize) -> bool {
        self.tables.contains(&table)
    }

    pub fn level_sizes(&self) -> Vec<u64> {
        self.levels.iter().map(|l| l.ids.len() as u64).collect()
    }

    fn recompute_depth(&self, l: usize, p: u32) -> u8 {
        let k = self.k();
        let counts = &self.depth_counts[l][p as usize * k..(p as usize + 1) * k];
        (l + 1..k).rev().find(|&d| counts[d] > 0).unwrap_or(l) as u8
    }

    /// Propagates a depth change of node `(l, p)` to `h` and its ancestors.
    fn depth_changed(&mut self, mut l: usize, mut p: u32, mut old: u8, mut new: u8) {
        let k = self.k();
        loop {
            if old == new {
                return;
            }
            let (lo, hi) = (old.min(new) as usize, old.max(new) as usize);
            for row in self.h.iter_mut().take(hi + 1).skip(lo + 1) {
                if new > old {
                    row[l] += 1;
                } else {
                    row[l] -= 1;
                }
            }
            self.levels[l].depth[p as usize] = new;
            if l == 0 {
                return;
            }
            let par = self.levels[l].parent[p as usize];
            if par == NONE {
                return;
            }
            let base = par as usize * k;
            self.depth_counts[l - 1][base + old as usize] -= 1;
            self.depth_counts[l - 1][base + new as usize] += 1;
            let before = self.levels[l - 1].depth[par as usize];
            let after = self.recompute_depth(l - 1, par);
            l -= 1;
            p = par;
            old = before;
            new = after;
        }
    }

    fn attach(&mut self, l: usize, p: u32, par: u32) {
        let k = self.k();
        self.levels[l].parent[p as usize] = par;
        self.levels[l - 1].children[par as usize].push(p);
        let d = self.levels[l].depth[p as usize];
        self.depth_counts[l - 1][par as usize * k + d as usize] += 1;
        let before = self.levels[l - 1].depth[par as usize];
        let after = self.recompute_depth(l - 1, par);
        self.depth_changed(l - 1, par, before, after);
    }

    fn detach(&mut self, l: usize, p: u32) {
        let k = self.k();
        let par = self.levels[l].parent[p as usize];
        if par == NONE {
            return;
        }
        self.levels[l].parent[p as usize] = NONE;
        let kids = &mut self.levels[l - 1].children[par as usize];
        let at = kids.iter().position(|&c| c == p).expect("child listed");
        kids.swap_remove(at);
        let d = self.levels[l].depth[p as usize];
        self.depth_counts[l - 1][par as usize * k + d as usize] -= 1;
        let before = self.levels[l - 1].depth[par as usize];
        let after = self.recompute_depth(l - 1, par);
        self.depth_changed(l - 1, par, before, after);
    }

    fn set_parent(&mut self, l: usize, tuple: i64, value: &Cell) {
        let Some(&p) = self.levels[l].pos.get(&tuple) else { return };
        self.detach(l, p);
        if let Cell::Int(v) = value {
            if let Some(&par) = self.levels[l - 1].pos.get(v) {
                self.attach(l, p, par);
            }
        }
    }

    fn push_node(&mut self, l: usize, id: i64, parent: Option<&Cell>) {
        let k = self.k();
        let lv = &mut self.levels[l];
        let p = lv.ids.len() as u32;
        lv.ids.push(id);
        lv.pos.insert(id, p);
        lv.parent.push(NONE);
        lv.children.push(Vec::new());
        lv.depth.push(l as u8);
        self.depth_counts[l].extend(std::iter::repeat_n(0, k));
        if let Some(Cell::Int(v)) = parent {
            if let Some(&par) = self.levels[l - 1].pos.get(v) {
                self.attach(l, p, par);
            }
        }
    }

    fn pop_node(&mut self, l: usize, id: i64) {
        let k = self.k();
        let p = self.levels[l].pos[&id];
        assert_eq!(p as usize, self.levels[l].ids.len() - 1, "only the newest node can be removed");
        assert!(self.levels[l].children[p as usize].is_empty(), "removed node still has children");
        if l > 0 {
            self.detach(l, p);
        }
        let d = self.levels[l].depth[p as usize];
        debug_assert_eq!(d as usize, l);
        let lv = &mut self.levels[l];
        lv.ids.pop();
        lv.pos.remove(&id);
        lv.parent.pop();
        lv.children.pop();
        lv.depth.pop();
        let n = self.depth_counts[l].len();
        self.depth_counts[l].truncate(n - k);
    }

    pub fn apply(&mut self, change: &Change) {
        self.step(change, false);
    }

    pub fn revert(&mut self, change: &Change) {
        self.step(change, true);
    }

    fn step(&mut self, change: &Change, backwards: bool) {
        match change {
            Change::Cell(cc) => {
                let Some(l) = self.level_of(cc.table) else { return };
                if l == 0 || cc.col != self.fk_cols[l] {
                    return;
                }
                let value = if backwards { &cc.old } else { &cc.new };
                self.set_parent(l, cc.tuple, value);
            }
            Change::Append { table, tuple } => {
                let Some(l) = self.level_of(*table) else { return };
                if backwards {
                    self.pop_node(l, tuple.id);
                } else {
                    let parent = (l > 0).then(|| &tuple.values[self.fk_cols[l]]);
                    self.push_node(l, tuple.id, parent);
                }
            }
        }
    }

    /// Level-`r` descendants of node `(l, p)`.
    pub(crate) fn descendants_at(&self, l: usize, p: u32, r: usize) -> Vec<u32> {
        let mut frontier = vec![p];
        for lv in l..r {
            let mut next = Vec::new();
            for &x in &frontier {
                next.extend_from_slice(&self.levels[lv].children[x as usize]);
            }
            frontier = next;
        }
        frontier
    }

    /// Level-`i` ancestor of node `(l, p)`, if the path is complete.
    pub(crate) fn ancestor_at(&self, mut l: usize, mut p: u32, i: usize) -> Option<u32> {
        while l > i {
            p = self.levels[l].parent[p as usize];
            if p == NONE {
                return None;
            }
            l -= 1;
        }
        Some(p)
    }
}
