use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::coordinator::Session;
use crate::dataset::{Cell, Dataset};
use crate::error::CoordError;
use crate::feature::{FeatureKind, FeatureSnapshot, FeatureState, TweakingTool};
use crate::modification::Modification;
use crate::rng::seeded;
use crate::schema::PairwiseBinding;

use super::dist::{check_necessity_p, compute_pairwise, ordered_pairs, pairwise_error, repair_target_p, to_classes, Class, PairwiseDistribution};
use super::state::{BindingState, PairwiseState};

/// One response from `responder` to a post owned by `owner`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub(crate) struct Unit {
    pub responder: i64,
    pub owner: i64,
}

fn class_distance(a: Class, b: Class) -> u64 {
    match (a, b) {
        (Class::Pair(a1, a2), Class::Pair(b1, b2)) => {
            let straight = a1.abs_diff(b1) as u64 + a2.abs_diff(b2) as u64;
            let crossed = a1.abs_diff(b2) as u64 + a2.abs_diff(b1) as u64;
            straight.min(crossed)
        }
        (Class::Own(x), Class::Own(y)) => x.abs_diff(y) as u64,
        _ => u64::MAX,
    }
}

/// Unordered user pairs without any response between them, ascending.
struct QuietPairs<'a> {
    users: &'a [i64],
    cnt: &'a HashMap<(i64, i64), u32>,
    i: usize,
    j: usize,
}

impl Iterator for QuietPairs<'_> {
    type Item = (i64, i64);
    fn next(&mut self) -> Option<(i64, i64)> {
        while self.i < self.users.len() {
            if self.j <= self.i {
                self.j = self.i + 1;
            }
            while self.j < self.users.len() {
                let (a, b) = (self.users[self.i], self.users[self.j]);
                self.j += 1;
                if !self.cnt.contains_key(&(a, b)) && !self.cnt.contains_key(&(b, a)) {
                    return Some((a, b));
                }
            }
            self.i += 1;
            self.j = 0;
        }
        None
    }
}

fn emit(removals: &mut Vec<Unit>, additions: &mut Vec<Unit>, unit: Unit, from: u32, to: u32) {
    let list = if to < from { removals } else { additions };
    for _ in 0..from.abs_diff(to) {
        list.push(unit);
    }
}

/// Matches each missing unit of mass with the closest surplus class and a
/// member currently in it, pairs first and self-responses after. Returns the
/// response units to remove and to add.
pub(crate) fn plan_units(bs: &BindingState, users: &[i64]) -> (Vec<Unit>, Vec<Unit>) {
    let mut removals = Vec::new();
    let mut additions = Vec::new();
    let Some(target) = &bs.target else { return (removals, additions) };
    let tclasses = to_classes(target);

    // pair side
    let mut members: BTreeMap<Class, Vec<(i64, i64)>> = BTreeMap::new();
    let mut seen = HashSet::new();
    for &(u, v) in bs.cnt.keys() {
        let (a, b) = (u.min(v), u.max(v));
        if seen.insert((a, b)) {
            let ca = bs.cnt.get(&(a, b)).copied().unwrap_or(0);
            let cb = bs.cnt.get(&(b, a)).copied().unwrap_or(0);
            members.entry(Class::pair(ca, cb)).or_default().push((a, b));
        }
    }
    let pairs_total = ordered_pairs(bs.users) / 2;
    let cur_nonzero: u64 = members.values().map(|m| m.len() as u64).sum();
    let mut cur: BTreeMap<Class, u64> = members.iter().map(|(c, m)| (*c, m.len() as u64)).collect();
    cur.insert(Class::Pair(0, 0), pairs_total.saturating_sub(cur_nonzero));
    let mut tgt: BTreeMap<Class, u64> = tclasses.iter().filter(|(c, _)| matches!(c, Class::Pair(..))).map(|(c, m)| (*c, *m)).collect();
    tgt.insert(Class::Pair(0, 0), target.zero_pairs_for(bs.users) / 2);
    for list in members.values_mut() {
        list.sort_by(|a, b| b.cmp(a));
    }
    let mut quiet = QuietPairs { users, cnt: &bs.cnt, i: 0, j: 0 };
    for (from, to) in match_classes(&cur, &tgt) {
        let member = if from == Class::Pair(0, 0) { quiet.next() } else { members.get_mut(&from).and_then(Vec::pop) };
        let Some((a, b)) = member else { break };
        let ca = bs.cnt.get(&(a, b)).copied().unwrap_or(0);
        let cb = bs.cnt.get(&(b, a)).copied().unwrap_or(0);
        let Class::Pair(x, y) = to else { unreachable!("pair class") };
        let straight = ca.abs_diff(x) + cb.abs_diff(y);
        let crossed = ca.abs_diff(y) + cb.abs_diff(x);
        let (ta, tb) = if straight <= crossed { (x, y) } else { (y, x) };
        emit(&mut removals, &mut additions, Unit { responder: a, owner: b }, ca, ta);
        emit(&mut removals, &mut additions, Unit { responder: b, owner: a }, cb, tb);
    }

    // self side
    let mut members: BTreeMap<Class, Vec<i64>> = BTreeMap::new();
    for (&u, &c) in &bs.selfc {
        members.entry(Class::Own(c)).or_default().push(u);
    }
    let mut cur: BTreeMap<Class, u64> = members.iter().map(|(c, m)| (*c, m.len() as u64)).collect();
    cur.insert(Class::Own(0), bs.users.saturating_sub(bs.selfc.len() as u64));
    let mut tgt: BTreeMap<Class, u64> = tclasses.iter().filter(|(c, _)| matches!(c, Class::Own(..))).map(|(c, m)| (*c, *m)).collect();
    tgt.insert(Class::Own(0), target.zero_self_for(bs.users));
    for list in members.values_mut() {
        list.sort_by(|a, b| b.cmp(a));
    }
    let mut quiet = users.iter().copied().filter(|u| !bs.selfc.contains_key(u));
    for (from, to) in match_classes(&cur, &tgt) {
        let member = if from == Class::Own(0) { quiet.next() } else { members.get_mut(&from).and_then(Vec::pop) };
        let Some(u) = member else { break };
        let (Class::Own(a), Class::Own(x)) = (from, to) else { unreachable!("self class") };
        emit(&mut removals, &mut additions, Unit { responder: u, owner: u }, a, x);
    }
    (removals, additions)
}

/// For every missing unit of target mass, the closest class with mass to
/// spare, ties broken by the smaller class.
fn match_classes(cur: &BTreeMap<Class, u64>, tgt: &BTreeMap<Class, u64>) -> Vec<(Class, Class)> {
    let mut surplus: BTreeMap<Class, u64> = BTreeMap::new();
    let mut deficit: BTreeMap<Class, u64> = BTreeMap::new();
    for (&c, &m) in cur {
        let t = tgt.get(&c).copied().unwrap_or(0);
        if m > t {
            surplus.insert(c, m - t);
        }
    }
    for (&c, &t) in tgt {
        let m = cur.get(&c).copied().unwrap_or(0);
        if t > m {
            deficit.insert(c, t - m);
        }
    }
    let mut out = Vec::new();
    for (to, need) in deficit {
        for _ in 0..need {
            let Some(from) = surplus
                .iter()
                .filter(|(_, &m)| m > 0)
                .min_by(|a, b| class_distance(to, *a.0).cmp(&class_distance(to, *b.0)).then(a.0.cmp(b.0)))
                .map(|(c, _)| *c)
            else {
                return out;
            };
            *surplus.get_mut(&from).expect("present") -= 1;
            out.push((from, to));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AcquiredVia {
    /// Ownership moved from a user with several posts.
    Steal,
    /// A new post tuple was appended.
    Append,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PostAcquisition {
    pub binding: String,
    pub owner: i64,
    pub post: i64,
    pub via: AcquiredVia,
}

/// Re-targets response tuples so that each binding's pairwise distribution
/// matches its target.
pub struct PairwiseTool {
    name: String,
    bindings: Vec<PairwiseBinding>,
    targets: Vec<PairwiseDistribution>,
    state: Option<PairwiseState>,
    allow_repair: bool,
    self_responses: bool,
    pub acquisitions: Vec<PostAcquisition>,
}

impl PairwiseTool {
    pub fn new(targets: Vec<PairwiseDistribution>) -> Self {
        PairwiseTool {
            name: "pairwise".into(),
            bindings: targets.iter().map(|t| t.binding.clone()).collect(),
            targets,
            state: None,
            allow_repair: true,
            self_responses: true,
            acquisitions: Vec::new(),
        }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_repair(mut self, allow: bool) -> Self {
        self.allow_repair = allow;
        self
    }

    /// When off, self-response targets are ignored and the current
    /// self-response distribution is kept as the target.
    pub fn with_self_responses(mut self, on: bool) -> Self {
        self.self_responses = on;
        self
    }

    pub fn targets(&self) -> &[PairwiseDistribution] {
        &self.targets
    }

    fn state_mut(&mut self) -> &mut PairwiseState {
        self.state.as_mut().expect("calculated before use")
    }
}

impl TweakingTool for PairwiseTool {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> FeatureKind {
        FeatureKind::Pairwise
    }

    fn calculate(&mut self, ds: &Dataset) {
        let targets: Vec<_> = self.targets.iter().cloned().map(Some).collect();
        self.state = Some(PairwiseState::build(ds, &self.bindings, &targets).expect("bindings resolve against the schema"));
    }

    fn state(&mut self) -> &mut dyn FeatureState {
        self.state_mut()
    }

    fn error(&self) -> f64 {
        self.state.as_ref().map_or(0.0, |s| s.error())
    }

    fn instance_errors(&self) -> Vec<(String, f64)> {
        let Some(s) = &self.state else { return Vec::new() };
        self.bindings.iter().zip(s.binding_errors()).map(|(b, e)| (b.response_table.clone(), e)).collect()
    }

    fn prepare(&mut self, ds: &Dataset) -> Result<Vec<String>, CoordError> {
        let sizes = ds.sizes();
        let mut notes = Vec::new();
        for (i, t) in self.targets.iter_mut().enumerate() {
            if !self.self_responses {
                let current = compute_pairwise(ds, &t.binding)?;
                t.rho_s = current.rho_s;
                t.zero_self = current.zero_self;
            }
            let violations = check_necessity_p(t, &sizes);
            if violations.is_empty() {
                continue;
            }
            if !self.allow_repair {
                return Err(CoordError::TargetInfeasible {
                    tool: self.name.clone(),
                    violations: violations.iter().map(|v| format!("{}: {v}", self.bindings[i].response_table)).collect(),
                });
            }
            *t = repair_target_p(t, &sizes)?;
            notes.push(format!("{}: repaired {} violation(s)", self.bindings[i].response_table, violations.len()));
        }
        if let Some(s) = &mut self.state {
            for (b, t) in s.bindings.iter_mut().zip(&self.targets) {
                b.target = Some(t.clone());
            }
        }
        Ok(notes)
    }

    fn tweak(&mut self, session: &mut Session<'_>) -> Result<(), CoordError> {
        for bi in 0..self.bindings.len() {
            let bs = &self.state_mut().bindings[bi];
            let mut users: Vec<i64> = session.dataset().table(bs.idx.users).ids().collect();
            users.sort_unstable();
            let (removals, additions) = plan_units(bs, &users);
            let mut owners: Vec<i64> = additions.iter().map(|u| u.owner).collect();
            owners.sort_unstable();
            owners.dedup();
            for owner in owners {
                if self.state_mut().bindings[bi].posts_of.contains_key(&owner) {
                    continue;
                }
                self.acquire_post(session, bi, owner)?;
            }
            self.execute_moves(session, bi, removals, additions)?;
        }
        Ok(())
    }

    fn snapshot(&self) -> FeatureSnapshot {
        FeatureSnapshot::Pairwise(self.state.as_ref().map(PairwiseState::distributions).unwrap_or_default())
    }

    fn fresh_snapshot(&self, ds: &Dataset) -> FeatureSnapshot {
        FeatureSnapshot::Pairwise(self.bindings.iter().map(|b| compute_pairwise(ds, b).expect("binding resolves")).collect())
    }

    fn fresh_error(&self, ds: &Dataset) -> f64 {
        if self.bindings.is_empty() {
            return 0.0;
        }
        let total: f64 = self
            .bindings
            .iter()
            .zip(&self.targets)
            .map(|(b, t)| pairwise_error(t, &compute_pairwise(ds, b).expect("binding resolves")).expect("same binding"))
            .sum();
        total / self.bindings.len() as f64
    }
}

impl PairwiseTool {
    /// Gives `owner` a post, taken from a user with several posts when the
    /// coordinator allows it, appended otherwise.
    fn acquire_post(&mut self, session: &mut Session<'_>, bi: usize, owner: i64) -> Result<(), CoordError> {
        let mut rng = seeded(session.seed(), &format!("steal{bi}:{owner}"));
        loop {
            let candidates = self.steal_candidates(bi);
            if candidates.is_empty() {
                break;
            }
            for &(from, post) in candidates.iter().take(session.max_candidates()) {
                let mods = self.steal_mods(bi, from, post, owner, &mut rng);
                let state = self.state.as_mut().expect("calculated");
                if session.submit(state, &mods)? {
                    self.acquisitions.push(PostAcquisition {
                        binding: self.bindings[bi].response_table.clone(),
                        owner,
                        post,
                        via: AcquiredVia::Steal,
                    });
                    return Ok(());
                }
            }
            if session.relax().is_err() {
                break;
            }
        }
        let bs = &self.state_mut().bindings[bi];
        let (posts, owner_col) = (bs.idx.posts, bs.idx.owner_col);
        let ds = session.dataset();
        let values = append_values(ds, posts, owner_col, owner);
        let post = ds.table(posts).next_id();
        let mods = [Modification::AppendTuple { table: posts, values }];
        loop {
            let state = self.state.as_mut().expect("calculated");
            if session.submit(state, &mods)? {
                break;
            }
            session.relax()?;
        }
        self.acquisitions.push(PostAcquisition {
            binding: self.bindings[bi].response_table.clone(),
            owner,
            post,
            via: AcquiredVia::Append,
        });
        Ok(())
    }

    /// (user, post) pairs to take a post from: users with the most posts
    /// first, each offering its post with the fewest responses.
    fn steal_candidates(&mut self, bi: usize) -> Vec<(i64, i64)> {
        let state = self.state_mut();
        let bs = &state.bindings[bi];
        let load = |post: i64| -> usize {
            state.bindings.iter().filter(|o| o.idx.posts == bs.idx.posts).map(|o| o.by_post.get(&post).map_or(0, |s| s.len())).sum()
        };
        let mut rich: Vec<(i64, usize)> = bs.posts_of.iter().filter(|(_, p)| p.len() > 1).map(|(&u, p)| (u, p.len())).collect();
        rich.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        rich.into_iter()
            .map(|(u, _)| {
                let post = bs.posts_of[&u].iter().copied().min_by_key(|&p| (load(p), p)).expect("several posts");
                (u, post)
            })
            .collect()
    }

    /// Moves responses off `post` onto the other posts of `from`, in every
    /// bound response table on the same post table, then hands `post` to
    /// `owner`.
    fn steal_mods(&mut self, bi: usize, from: i64, post: i64, owner: i64, rng: &mut impl Rng) -> Vec<Modification> {
        let state = self.state_mut();
        let bs = &state.bindings[bi];
        let others: Vec<i64> = bs.posts_of[&from].iter().copied().filter(|&p| p != post).collect();
        let mut mods = Vec::new();
        let mut done = HashSet::new();
        for o in state.bindings.iter().filter(|o| o.idx.posts == bs.idx.posts) {
            if !done.insert(o.idx.responses) {
                continue;
            }
            for r in o.responses_on(post) {
                let to = others[rng.random_range(0..others.len())];
                mods.extend(Modification::move_cells(o.idx.responses, r, vec![o.idx.post_col], vec![Cell::Int(to)]));
            }
        }
        mods.push(Modification::replace_one(bs.idx.posts, post, bs.idx.owner_col, Cell::Int(owner)));
        mods
    }

    fn execute_moves(&mut self, session: &mut Session<'_>, bi: usize, removals: Vec<Unit>, additions: Vec<Unit>) -> Result<(), CoordError> {
        let mut rng = seeded(session.seed(), &format!("moves{bi}"));
        let bs = &self.state_mut().bindings[bi];
        let idx = bs.idx;
        let wanted: HashSet<Unit> = removals.iter().copied().collect();
        let mut holders: HashMap<Unit, Vec<i64>> = HashMap::new();
        for (&r, &(u, p)) in &bs.resp {
            let (Some(u), Some(p)) = (u, p) else { continue };
            let Some(Some(o)) = bs.post_owner.get(&p).copied() else { continue };
            let unit = Unit { responder: u, owner: o };
            if wanted.contains(&unit) {
                holders.entry(unit).or_default().push(r);
            }
        }
        let mut keys: Vec<Unit> = holders.keys().copied().collect();
        keys.sort();
        for k in keys {
            let list = holders.get_mut(&k).expect("present");
            list.sort_unstable();
            list.shuffle(&mut rng);
        }

        for (rem, add) in removals.into_iter().zip(additions) {
            loop {
                let list = holders.get(&rem).cloned().unwrap_or_default();
                if list.is_empty() {
                    return Err(CoordError::TargetInfeasible {
                        tool: self.name.clone(),
                        violations: vec![format!("{}: no response from {} to {}", self.bindings[bi].response_table, rem.responder, rem.owner)],
                    });
                }
                let posts = self.state_mut().bindings[bi].posts(add.owner);
                if posts.is_empty() {
                    return Err(CoordError::TargetInfeasible {
                        tool: self.name.clone(),
                        violations: vec![format!("{}: user {} owns no post", self.bindings[bi].response_table, add.owner)],
                    });
                }
                let mut applied = None;
                for (pos, &r) in list.iter().enumerate().take(session.max_candidates()) {
                    let post = posts[rng.random_range(0..posts.len())];
                    let mods = Modification::move_cells(idx.responses, r, vec![idx.user_col, idx.post_col], vec![Cell::Int(add.responder), Cell::Int(post)]);
                    let state = self.state.as_mut().expect("calculated");
                    if session.submit(state, &mods)? {
                        applied = Some(pos);
                        break;
                    }
                }
                match applied {
                    Some(pos) => {
                        holders.get_mut(&rem).expect("listed").remove(pos);
                        break;
                    }
                    None => {
                        session.relax()?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Values for a new post owned by `owner`: copied from the first post when
/// there is one, defaults otherwise.
fn append_values(ds: &Dataset, posts: usize, owner_col: usize, owner: i64) -> Vec<Cell> {
    let table = ds.table(posts);
    let mut values = match table.rows().first() {
        Some(row) => row.values.clone(),
        None => {
            let schema = ds.schema();
            let ts = &schema.tables[posts];
            let mut v: Vec<Cell> = ts.value_columns().map(|c| Cell::default_for(c.kind)).collect();
            for fk in schema.resolved_fks(posts) {
                let first = ds.table(fk.target).rows().first().map(|r| r.id);
                v[fk.value_index] = first.map_or(Cell::Empty, Cell::Int);
            }
            v
        }
    };
    values[owner_col] = Cell::Int(owner);
    values
}
