use std::collections::{BTreeMap, HashMap, HashSet};

use crate::coordinator::Session;
use crate::dataset::Dataset;
use crate::error::CoordError;
use crate::feature::{FeatureKind, FeatureSnapshot, FeatureState, TweakingTool};
use crate::modification::Modification;

use super::dist::{check_necessity_c, coappear_error, compute_coappear, repair_target_c, CoappearDistribution, CoappearGroup};
use super::state::{key_cells, CoappearState, GroupState};

/// One combination changing its coappear vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Transfer {
    pub combo: Vec<i64>,
    pub from: Vec<u32>,
    pub to: Vec<u32>,
}

fn manhattan(a: &[u32], b: &[u32]) -> u64 {
    a.iter().zip(b).map(|(x, y)| x.abs_diff(*y) as u64).sum()
}

/// Walks all key combinations in lexicographic order.
struct Odometer {
    ids: Vec<Vec<i64>>,
    digits: Vec<usize>,
    done: bool,
}

impl Odometer {
    fn new(ids: Vec<Vec<i64>>) -> Self {
        let done = ids.iter().any(Vec::is_empty);
        let digits = vec![0; ids.len()];
        Odometer { ids, digits, done }
    }
}

impl Iterator for Odometer {
    type Item = Vec<i64>;
    fn next(&mut self) -> Option<Vec<i64>> {
        if self.done {
            return None;
        }
        let out = self.digits.iter().zip(&self.ids).map(|(&d, ids)| ids[d]).collect();
        let mut p = self.digits.len();
        loop {
            if p == 0 {
                self.done = true;
                break;
            }
            p -= 1;
            self.digits[p] += 1;
            if self.digits[p] < self.ids[p].len() {
                break;
            }
            self.digits[p] = 0;
        }
        Some(out)
    }
}

/// Matches each missing unit of mass with the closest surplus vector and a
/// combination currently holding it.
pub(crate) fn plan_transfers(gs: &GroupState, ref_ids: Vec<Vec<i64>>) -> Vec<Transfer> {
    let Some(target) = &gs.target else { return Vec::new() };
    let k = gs.referencing.len();
    let zero = vec![0u32; k];
    let n = gs.combinations();
    let mut surplus: BTreeMap<Vec<u32>, u64> = BTreeMap::new();
    let mut deficit: BTreeMap<Vec<u32>, u64> = BTreeMap::new();
    let mut note = |v: &Vec<u32>, cur: u64, tgt: u64| {
        if cur > tgt {
            surplus.insert(v.clone(), cur - tgt);
        } else if tgt > cur {
            deficit.insert(v.clone(), tgt - cur);
        }
    };
    for (v, &cur) in &gs.dist {
        note(v, cur, target.get(v));
    }
    for (v, &tgt) in &target.entries {
        if !gs.dist.contains_key(v) {
            note(v, 0, tgt);
        }
    }
    let nonzero: u64 = gs.dist.values().sum();
    note(&zero, n.saturating_sub(nonzero), target.zero_mass_for(n));

    let mut members: HashMap<Vec<u32>, Vec<Vec<i64>>> = HashMap::new();
    for (combo, v) in &gs.combos {
        if surplus.contains_key(v) {
            members.entry(v.clone()).or_default().push(combo.clone());
        }
    }
    for list in members.values_mut() {
        // popped from the back, so smallest key last
        list.sort_by(|a, b| b.cmp(a));
    }
    let mut fresh = Odometer::new(ref_ids).filter(|c| !gs.combos.contains_key(c));

    let mut out = Vec::new();
    for (v, need) in deficit {
        for _ in 0..need {
            let Some(from) = surplus
                .iter()
                .filter(|(_, &m)| m > 0)
                .min_by(|a, b| manhattan(&v, a.0).cmp(&manhattan(&v, b.0)).then(a.0.cmp(b.0)))
                .map(|(f, _)| f.clone())
            else {
                return out;
            };
            let combo = if from == zero {
                fresh.next()
            } else {
                members.get_mut(&from).and_then(Vec::pop)
            };
            let Some(combo) = combo else { return out };
            *surplus.get_mut(&from).expect("present") -= 1;
            out.push(Transfer { combo, from, to: v.clone() });
        }
    }
    out
}

/// Moves foreign-key combinations between tuples so that each group's
/// coappear distribution matches its target.
pub struct CoappearTool {
    name: String,
    groups: Vec<CoappearGroup>,
    targets: Vec<CoappearDistribution>,
    state: Option<CoappearState>,
    allow_repair: bool,
}

impl CoappearTool {
    pub fn new(targets: Vec<CoappearDistribution>) -> Self {
        CoappearTool {
            name: "coappear".into(),
            groups: targets.iter().map(|t| t.group.clone()).collect(),
            targets,
            state: None,
            allow_repair: true,
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

    pub fn targets(&self) -> &[CoappearDistribution] {
        &self.targets
    }

    fn state_mut(&mut self) -> &mut CoappearState {
        self.state.as_mut().expect("calculated before use")
    }
}

impl TweakingTool for CoappearTool {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> FeatureKind {
        FeatureKind::Coappear
    }

    fn calculate(&mut self, ds: &Dataset) {
        let targets: Vec<_> = self.targets.iter().cloned().map(Some).collect();
        self.state = Some(CoappearState::build(ds, &self.groups, &targets).expect("groups resolve against the schema"));
    }

    fn state(&mut self) -> &mut dyn FeatureState {
        self.state_mut()
    }

    fn error(&self) -> f64 {
        self.state.as_ref().map_or(0.0, |s| s.error())
    }

    fn instance_errors(&self) -> Vec<(String, f64)> {
        let Some(s) = &self.state else { return Vec::new() };
        self.groups.iter().zip(s.group_errors()).map(|(g, e)| (g.to_string(), e)).collect()
    }

    fn prepare(&mut self, ds: &Dataset) -> Result<Vec<String>, CoordError> {
        let sizes = ds.sizes();
        let mut notes = Vec::new();
        for t in &mut self.targets {
            let violations = check_necessity_c(t, &sizes);
            if violations.is_empty() {
                continue;
            }
            if !self.allow_repair {
                return Err(CoordError::TargetInfeasible {
                    tool: self.name.clone(),
                    violations: violations.iter().map(|v| format!("{}: {v}", t.group)).collect(),
                });
            }
            *t = repair_target_c(t, &sizes)?;
            notes.push(format!("{}: repaired {} violation(s)", t.group, violations.len()));
        }
        if let Some(s) = &mut self.state {
            for (g, t) in s.groups.iter_mut().zip(&self.targets) {
                g.set_target(Some(t.clone()));
            }
        }
        Ok(notes)
    }

    fn tweak(&mut self, session: &mut Session<'_>) -> Result<(), CoordError> {
        for gi in 0..self.groups.len() {
            let gs = &self.state_mut().groups[gi];
            let ds = session.dataset();
            let ref_ids: Vec<Vec<i64>> = gs.referenced.iter().map(|&t| ds.table(t).ids().collect()).collect();
            let transfers = plan_transfers(gs, ref_ids);
            for i in 0..self.groups[gi].referencing.len() {
                self.execute_table(session, gi, i, &transfers)?;
            }
        }
        Ok(())
    }

    fn snapshot(&self) -> FeatureSnapshot {
        FeatureSnapshot::Coappear(self.state.as_ref().map(CoappearState::distributions).unwrap_or_default())
    }

    fn fresh_snapshot(&self, ds: &Dataset) -> FeatureSnapshot {
        FeatureSnapshot::Coappear(self.groups.iter().map(|g| compute_coappear(ds, g).expect("group resolves")).collect())
    }

    fn fresh_error(&self, ds: &Dataset) -> f64 {
        if self.groups.is_empty() {
            return 0.0;
        }
        let total: f64 = self
            .groups
            .iter()
            .zip(&self.targets)
            .map(|(g, t)| coappear_error(t, &compute_coappear(ds, g).expect("group resolves")).expect("same group"))
            .sum();
        total / self.groups.len() as f64
    }
}

impl CoappearTool {
    /// Re-points tuples of referencing table `i` from surplus combinations
    /// to deficit ones, one tuple per proposal.
    fn execute_table(&mut self, session: &mut Session<'_>, gi: usize, i: usize, transfers: &[Transfer]) -> Result<(), CoordError> {
        let mut removals = Vec::new();
        let mut additions = Vec::new();
        for t in transfers {
            let (from, to) = (t.from[i], t.to[i]);
            for _ in to..from {
                removals.push(&t.combo);
            }
            for _ in from..to {
                additions.push(&t.combo);
            }
        }
        if removals.is_empty() {
            return Ok(());
        }
        let gs = &self.state_mut().groups[gi];
        let (table, cols) = (gs.referencing[i], gs.cols[i].clone());
        let wanted: HashSet<&Vec<i64>> = removals.iter().copied().collect();
        let mut holders: HashMap<Vec<i64>, Vec<i64>> = HashMap::new();
        for (&tuple, key) in &gs.keys[i] {
            if let Some(combo) = key.iter().copied().collect::<Option<Vec<i64>>>() {
                if wanted.contains(&combo) {
                    holders.entry(combo).or_default().push(tuple);
                }
            }
        }
        for list in holders.values_mut() {
            list.sort_unstable();
        }

        for (rem, add) in removals.into_iter().zip(additions) {
            loop {
                let list = holders.get(rem).cloned().unwrap_or_default();
                if list.is_empty() {
                    return Err(CoordError::TargetInfeasible {
                        tool: self.name.clone(),
                        violations: vec![format!("{}: no tuple holds {:?}", self.groups[gi], rem)],
                    });
                }
                let mut applied = None;
                for (pos, &tuple) in list.iter().enumerate().take(session.max_candidates()) {
                    let mods = Modification::move_cells(table, tuple, cols.clone(), key_cells(add));
                    let state = self.state.as_mut().expect("calculated");
                    if session.submit(state, &mods)? {
                        applied = Some(pos);
                        break;
                    }
                }
                match applied {
                    Some(pos) => {
                        holders.get_mut(rem).expect("listed").remove(pos);
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
