use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::dataset::Dataset;
use crate::error::FeatureError;
use crate::feature::FeatureState;
use crate::modification::Change;
use crate::schema::PairwiseBinding;

use super::dist::{ordered_pairs, BindingIndex, PairwiseDistribution};

/// One binding's distribution kept current under edits.
#[derive(Debug, Clone)]
pub(crate) struct BindingState {
    pub binding: PairwiseBinding,
    pub idx: BindingIndex,
    pub users: u64,
    pub post_owner: HashMap<i64, Option<i64>>,
    pub posts_of: HashMap<i64, BTreeSet<i64>>,
    /// Response tuple -> (user, post) cells.
    pub resp: HashMap<i64, (Option<i64>, Option<i64>)>,
    /// Post -> response tuples on it.
    pub by_post: HashMap<i64, BTreeSet<i64>>,
    /// Post -> responder -> responses.
    pub post_resp: HashMap<i64, HashMap<i64, u32>>,
    /// Directed (responder, owner) counts, responder != owner.
    pub cnt: HashMap<(i64, i64), u32>,
    pub selfc: HashMap<i64, u32>,
    n: HashMap<(u32, u32), u64>,
    s: HashMap<u32, u64>,
    pub target: Option<PairwiseDistribution>,
}

impl BindingState {
    pub fn build(ds: &Dataset, binding: &PairwiseBinding, target: Option<PairwiseDistribution>) -> Result<Self, FeatureError> {
        let idx = BindingIndex::resolve(ds, binding)?;
        let mut st = BindingState {
            binding: binding.clone(),
            idx,
            users: ds.table(idx.users).len() as u64,
            post_owner: HashMap::new(),
            posts_of: HashMap::new(),
            resp: HashMap::new(),
            by_post: HashMap::new(),
            post_resp: HashMap::new(),
            cnt: HashMap::new(),
            selfc: HashMap::new(),
            n: HashMap::new(),
            s: HashMap::new(),
            target,
        };
        for row in ds.table(idx.posts).rows() {
            st.add_post(row.id, row.values[idx.owner_col].as_int());
        }
        for row in ds.table(idx.responses).rows() {
            let cells = (row.values[idx.user_col].as_int(), row.values[idx.post_col].as_int());
            st.set_resp(row.id, Some(cells));
        }
        Ok(st)
    }

    /// Replaces the tracked cells of a response tuple; `None` forgets it.
    fn set_resp(&mut self, id: i64, cells: Option<(Option<i64>, Option<i64>)>) {
        if let Some(old) = self.resp.remove(&id) {
            self.link(old, -1);
            if let Some(p) = old.1 {
                let set = self.by_post.get_mut(&p).expect("indexed");
                set.remove(&id);
                if set.is_empty() {
                    self.by_post.remove(&p);
                }
            }
        }
        if let Some(new) = cells {
            self.link(new, 1);
            if let Some(p) = new.1 {
                self.by_post.entry(p).or_default().insert(id);
            }
            self.resp.insert(id, new);
        }
    }

    fn add_post(&mut self, post: i64, owner: Option<i64>) {
        self.post_owner.insert(post, owner);
        if let Some(o) = owner {
            self.posts_of.entry(o).or_default().insert(post);
        }
    }

    fn remove_post(&mut self, post: i64) {
        if let Some(Some(o)) = self.post_owner.remove(&post) {
            self.unlist(o, post);
        }
    }

    fn unlist(&mut self, owner: i64, post: i64) {
        if let Some(set) = self.posts_of.get_mut(&owner) {
            set.remove(&post);
            if set.is_empty() {
                self.posts_of.remove(&owner);
            }
        }
    }

    fn bump_n(&mut self, key: (u32, u32), delta: i64) {
        if key == (0, 0) {
            return;
        }
        let e = self.n.entry(key).or_insert(0);
        *e = (*e as i64 + delta) as u64;
        if *e == 0 {
            self.n.remove(&key);
        }
    }

    fn bump_s(&mut self, x: u32, delta: i64) {
        if x == 0 {
            return;
        }
        let e = self.s.entry(x).or_insert(0);
        *e = (*e as i64 + delta) as u64;
        if *e == 0 {
            self.s.remove(&x);
        }
    }

    /// Adds `delta` responses from `u` to posts owned by `o`.
    fn contrib(&mut self, u: i64, o: i64, delta: i64) {
        if u == o {
            let a = self.selfc.get(&u).copied().unwrap_or(0);
            let b = (a as i64 + delta) as u32;
            self.bump_s(a, -1);
            self.bump_s(b, 1);
            if b == 0 {
                self.selfc.remove(&u);
            } else {
                self.selfc.insert(u, b);
            }
            return;
        }
        let a = self.cnt.get(&(u, o)).copied().unwrap_or(0);
        let back = self.cnt.get(&(o, u)).copied().unwrap_or(0);
        let b = (a as i64 + delta) as u32;
        self.bump_n((a, back), -1);
        self.bump_n((back, a), -1);
        self.bump_n((b, back), 1);
        self.bump_n((back, b), 1);
        if b == 0 {
            self.cnt.remove(&(u, o));
        } else {
            self.cnt.insert((u, o), b);
        }
    }

    fn link(&mut self, cells: (Option<i64>, Option<i64>), delta: i64) {
        let (Some(u), Some(p)) = cells else { return };
        let e = self.post_resp.entry(p).or_default().entry(u).or_insert(0);
        *e = (*e as i64 + delta) as u32;
        if *e == 0 {
            let m = self.post_resp.get_mut(&p).expect("present");
            m.remove(&u);
            if m.is_empty() {
                self.post_resp.remove(&p);
            }
        }
        if let Some(Some(o)) = self.post_owner.get(&p).copied() {
            self.contrib(u, o, delta);
        }
    }

    fn set_owner(&mut self, post: i64, owner: Option<i64>) {
        let old = self.post_owner.get(&post).copied().flatten();
        let responders: Vec<(i64, u32)> = self.post_resp.get(&post).map(|m| m.iter().map(|(&u, &c)| (u, c)).collect()).unwrap_or_default();
        if let Some(o) = old {
            for &(u, c) in &responders {
                self.contrib(u, o, -(c as i64));
            }
            self.unlist(o, post);
        }
        self.post_owner.insert(post, owner);
        if let Some(o) = owner {
            self.posts_of.entry(o).or_default().insert(post);
            for &(u, c) in &responders {
                self.contrib(u, o, c as i64);
            }
        }
    }

    pub fn watches(&self, table: usize) -> bool {
        table == self.idx.users || table == self.idx.posts || table == self.idx.responses
    }

    pub fn step(&mut self, change: &Change, backwards: bool) {
        let idx = self.idx;
        match change {
            Change::Cell(cc) => {
                let value = if backwards { &cc.old } else { &cc.new };
                if cc.table == idx.posts && cc.col == idx.owner_col {
                    self.set_owner(cc.tuple, value.as_int());
                }
                if cc.table == idx.responses && (cc.col == idx.user_col || cc.col == idx.post_col) {
                    let Some(&cells) = self.resp.get(&cc.tuple) else { return };
                    let mut next = cells;
                    if cc.col == idx.user_col {
                        next.0 = value.as_int();
                    } else {
                        next.1 = value.as_int();
                    }
                    self.set_resp(cc.tuple, Some(next));
                }
            }
            Change::Append { table, tuple } => {
                if *table == idx.users {
                    if backwards {
                        self.users -= 1;
                    } else {
                        self.users += 1;
                    }
                }
                if *table == idx.posts {
                    if backwards {
                        self.remove_post(tuple.id);
                    } else {
                        self.add_post(tuple.id, tuple.values[idx.owner_col].as_int());
                    }
                }
                if *table == idx.responses {
                    if backwards {
                        self.set_resp(tuple.id, None);
                    } else {
                        let cells = (tuple.values[idx.user_col].as_int(), tuple.values[idx.post_col].as_int());
                        self.set_resp(tuple.id, Some(cells));
                    }
                }
            }
        }
    }

    pub fn pair_mass(&self) -> u64 {
        self.n.values().sum()
    }

    pub fn self_mass(&self) -> u64 {
        self.s.values().sum()
    }

    pub fn error(&self) -> f64 {
        let Some(t) = &self.target else { return 0.0 };
        let mut diff = 0u64;
        for (k, &m) in &self.n {
            diff += m.abs_diff(t.n(k.0, k.1));
        }
        diff += t.rho_n.iter().filter(|(k, _)| !self.n.contains_key(k)).map(|(_, m)| m).sum::<u64>();
        let zero_pairs = ordered_pairs(self.users).saturating_sub(self.pair_mass());
        diff += zero_pairs.abs_diff(t.zero_pairs_for(self.users));
        for (k, &m) in &self.s {
            diff += m.abs_diff(t.s(*k));
        }
        diff += t.rho_s.iter().filter(|(k, _)| !self.s.contains_key(k)).map(|(_, m)| m).sum::<u64>();
        let zero_self = self.users.saturating_sub(self.self_mass());
        diff += zero_self.abs_diff(t.zero_self_for(self.users));
        diff as f64 / ordered_pairs(self.users).max(1) as f64
    }

    pub fn distribution(&self) -> PairwiseDistribution {
        let mut d = PairwiseDistribution::empty(self.binding.clone());
        d.rho_n = self.n.iter().map(|(&k, &m)| (k, m)).collect::<BTreeMap<_, _>>();
        d.rho_s = self.s.iter().map(|(&k, &m)| (k, m)).collect::<BTreeMap<_, _>>();
        d.zero_pairs = Some(ordered_pairs(self.users).saturating_sub(self.pair_mass()));
        d.zero_self = Some(self.users.saturating_sub(self.self_mass()));
        d
    }

    /// Posts owned by `user`, ascending.
    pub fn posts(&self, user: i64) -> Vec<i64> {
        self.posts_of.get(&user).map(|s| s.iter().copied().collect()).unwrap_or_default()
    }

    pub fn responses_on(&self, post: i64) -> Vec<i64> {
        self.by_post.get(&post).map(|s| s.iter().copied().collect()).unwrap_or_default()
    }
}

/// Distributions of several bindings with their targets.
#[derive(Debug, Clone)]
pub struct PairwiseState {
    pub(crate) bindings: Vec<BindingState>,
}

impl PairwiseState {
    pub fn build(ds: &Dataset, bindings: &[PairwiseBinding], targets: &[Option<PairwiseDistribution>]) -> Result<Self, FeatureError> {
        let bindings = bindings
            .iter()
            .zip(targets)
            .map(|(b, t)| BindingState::build(ds, b, t.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(PairwiseState { bindings })
    }

    pub fn distributions(&self) -> Vec<PairwiseDistribution> {
        self.bindings.iter().map(BindingState::distribution).collect()
    }

    pub fn binding_errors(&self) -> Vec<f64> {
        self.bindings.iter().map(BindingState::error).collect()
    }
}

impl FeatureState for PairwiseState {
    fn watches(&self, table: usize) -> bool {
        self.bindings.iter().any(|b| b.watches(table))
    }

    fn apply(&mut self, change: &Change) {
        for b in &mut self.bindings {
            if b.watches(change.table()) {
                b.step(change, false);
            }
        }
    }

    fn revert(&mut self, change: &Change) {
        for b in &mut self.bindings {
            if b.watches(change.table()) {
                b.step(change, true);
            }
        }
    }

    fn error(&self) -> f64 {
        let with_target: Vec<f64> = self.bindings.iter().filter(|b| b.target.is_some()).map(BindingState::error).collect();
        if with_target.is_empty() {
            0.0
        } else {
            with_target.iter().sum::<f64>() / with_target.len() as f64
        }
    }
}
