use std::collections::{BTreeMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chain::ReferenceChain;
use crate::coordinator::{simulate, Session};
use crate::dataset::{Cell, Dataset};
use crate::error::{CoordError, FeatureError};
use crate::feature::{FeatureKind, FeatureSnapshot, FeatureState, TweakingTool};
use crate::modification::{resolve, Change, Modification};
use crate::schema::DatasetSchema;

use super::forest::{ChainForest, NONE};
use super::matrix::{check_necessity_l, compute_linear_matrix, linear_error, linear_error_rows, repair_target_l, LinearJoinMatrix};

/// Resolves a root-first table list to a chain through the schema's
/// foreign keys.
pub fn resolve_chain(schema: &DatasetSchema, tables: &[String]) -> Result<ReferenceChain, FeatureError> {
    let mut fk_columns = Vec::new();
    for w in tables.windows(2) {
        let child = schema.table(&w[1]).ok_or_else(|| FeatureError::UnknownTable(w[1].clone()))?;
        schema.table(&w[0]).ok_or_else(|| FeatureError::UnknownTable(w[0].clone()))?;
        let fk = child
            .foreign_keys
            .iter()
            .find(|fk| fk.references == w[0])
            .ok_or_else(|| FeatureError::ShapeMismatch(format!("`{}` does not reference `{}`", w[1], w[0])))?;
        fk_columns.push(fk.column.clone());
    }
    Ok(ReferenceChain { tables: tables.to_vec(), fk_columns })
}

/// Incremental matrices of several chains with their targets.
#[derive(Debug, Clone)]
pub struct LinearState {
    forests: Vec<ChainForest>,
    targets: Vec<LinearJoinMatrix>,
}

impl LinearState {
    pub fn build(ds: &Dataset, chains: &[ReferenceChain], targets: &[LinearJoinMatrix]) -> Self {
        LinearState { forests: chains.iter().map(|c| ChainForest::build(ds, c)).collect(), targets: targets.to_vec() }
    }

    pub fn matrices(&self) -> Vec<LinearJoinMatrix> {
        self.forests.iter().map(ChainForest::matrix).collect()
    }

    fn chain_error(&self, c: usize) -> f64 {
        linear_error_rows(&self.targets[c].h, self.forests[c].rows())
    }
}

impl FeatureState for LinearState {
    fn watches(&self, table: usize) -> bool {
        self.forests.iter().any(|f| f.watches(table))
    }

    fn apply(&mut self, change: &Change) {
        for f in &mut self.forests {
            if f.watches(change.table()) {
                f.apply(change);
            }
        }
    }

    fn revert(&mut self, change: &Change) {
        for f in &mut self.forests {
            if f.watches(change.table()) {
                f.revert(change);
            }
        }
    }

    fn error(&self) -> f64 {
        if self.forests.is_empty() {
            return 0.0;
        }
        (0..self.forests.len()).map(|c| self.chain_error(c)).sum::<f64>() / self.forests.len() as f64
    }
}

/// One chain of a [`LinearState`] seen as a feature on its own.
struct ChainView<'a> {
    forest: &'a mut ChainForest,
    target: &'a LinearJoinMatrix,
}

impl FeatureState for ChainView<'_> {
    fn watches(&self, table: usize) -> bool {
        self.forest.watches(table)
    }
    fn apply(&mut self, change: &Change) {
        self.forest.apply(change)
    }
    fn revert(&mut self, change: &Change) {
        self.forest.revert(change)
    }
    fn error(&self) -> f64 {
        linear_error_rows(&self.target.h, self.forest.rows())
    }
}

/// Isomorphic adjustments made for one matrix entry, with the bound they
/// must respect.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IsoRecord {
    pub chain: usize,
    pub row: usize,
    pub col: usize,
    pub moves: usize,
    pub bound: usize,
}

/// Tweaks the root counts of reference chains, one chain after another.
pub struct LinearTool {
    name: String,
    chains: Vec<ReferenceChain>,
    targets: Vec<LinearJoinMatrix>,
    state: Option<LinearState>,
    allow_repair: bool,
    trace_rows: bool,
    /// Matrix of each chain after each finished row, when tracing.
    pub row_trace: Vec<(usize, usize, LinearJoinMatrix)>,
    pub iso_log: Vec<IsoRecord>,
}

impl LinearTool {
    pub fn new(schema: &DatasetSchema, targets: Vec<LinearJoinMatrix>) -> Result<Self, FeatureError> {
        let mut chains = Vec::with_capacity(targets.len());
        for t in &targets {
            t.check_shape()?;
            chains.push(resolve_chain(schema, &t.chain)?);
        }
        Ok(LinearTool {
            name: "linear".into(),
            chains,
            targets,
            state: None,
            allow_repair: true,
            trace_rows: false,
            row_trace: Vec::new(),
            iso_log: Vec::new(),
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_repair(mut self, allow: bool) -> Self {
        self.allow_repair = allow;
        self
    }

    pub fn with_row_trace(mut self, on: bool) -> Self {
        self.trace_rows = on;
        self
    }

    pub fn chains(&self) -> &[ReferenceChain] {
        &self.chains
    }

    pub fn targets(&self) -> &[LinearJoinMatrix] {
        &self.targets
    }

    fn state_mut(&mut self) -> &mut LinearState {
        self.state.as_mut().expect("calculated before use")
    }
}

impl TweakingTool for LinearTool {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> FeatureKind {
        FeatureKind::Linear
    }

    fn calculate(&mut self, ds: &Dataset) {
        self.state = Some(LinearState::build(ds, &self.chains, &self.targets));
    }

    fn state(&mut self) -> &mut dyn FeatureState {
        self.state_mut()
    }

    fn error(&self) -> f64 {
        self.state.as_ref().map_or(0.0, |s| s.error())
    }

    fn instance_errors(&self) -> Vec<(String, f64)> {
        let Some(s) = &self.state else { return Vec::new() };
        self.chains.iter().enumerate().map(|(c, ch)| (ch.to_string(), s.chain_error(c))).collect()
    }

    fn prepare(&mut self, ds: &Dataset) -> Result<Vec<String>, CoordError> {
        let mut notes = Vec::new();
        for (c, chain) in self.chains.iter().enumerate() {
            let sizes: Vec<u64> =
                chain.tables.iter().map(|t| ds.table_by_name(t).expect("chain table").len() as u64).collect();
            let violations = check_necessity_l(&self.targets[c], &sizes)?;
            if violations.is_empty() {
                continue;
            }
            if !self.allow_repair {
                return Err(CoordError::TargetInfeasible {
                    tool: self.name.clone(),
                    violations: violations.iter().map(|v| format!("{chain}: {v}")).collect(),
                });
            }
            self.targets[c] = repair_target_l(&self.targets[c], &sizes)?;
            notes.push(format!("{chain}: repaired {} violation(s)", violations.len()));
        }
        if let Some(s) = &mut self.state {
            s.targets = self.targets.clone();
        }
        Ok(notes)
    }

    fn tweak(&mut self, session: &mut Session<'_>) -> Result<(), CoordError> {
        let mut rng = ChaCha8Rng::seed_from_u64(session.seed());
        let mut run = ChainRun { protected: Vec::new(), threshold: session.config().e_threshold };
        self.row_trace.clear();
        self.iso_log.clear();
        for c in 0..self.chains.len() {
            let k = self.chains[c].len();
            for r in 1..k {
                for i in 0..r {
                    let cur = self.state_mut().forests[c].h[r][i];
                    let tgt = self.targets[c].h[r][i];
                    if cur > tgt {
                        self.decrease(session, &mut run, &mut rng, c, r, i, cur - tgt)?;
                    } else if cur < tgt {
                        self.increase(session, &mut run, &mut rng, c, r, i, tgt - cur)?;
                    }
                }
                if self.trace_rows {
                    let m = self.state_mut().forests[c].matrix();
                    self.row_trace.push((c, r, m));
                }
            }
            run.protected.push(c);
        }
        for c in 0..self.chains.len() {
            let e = self.state_mut().chain_error(c);
            if e > 0.0 {
                session.note_tolerated(self.chains[c].to_string(), e);
            }
        }
        Ok(())
    }

    fn snapshot(&self) -> FeatureSnapshot {
        FeatureSnapshot::Linear(self.state.as_ref().map(LinearState::matrices).unwrap_or_default())
    }

    fn fresh_snapshot(&self, ds: &Dataset) -> FeatureSnapshot {
        FeatureSnapshot::Linear(self.chains.iter().map(|c| compute_linear_matrix(ds, c)).collect())
    }

    fn fresh_error(&self, ds: &Dataset) -> f64 {
        if self.chains.is_empty() {
            return 0.0;
        }
        let total: f64 = self
            .chains
            .iter()
            .zip(&self.targets)
            .map(|(c, t)| linear_error(t, &compute_linear_matrix(ds, c)).expect("same chain"))
            .sum();
        total / self.chains.len() as f64
    }
}

struct ChainRun {
    /// Chains finished earlier in this run whose error is still checked.
    protected: Vec<usize>,
    threshold: f64,
}

enum Outcome {
    Applied,
    OwnRejected,
    Rejected,
}

impl LinearTool {
    fn try_batch(&mut self, session: &mut Session<'_>, run: &ChainRun, mods: &[Modification]) -> Result<Outcome, CoordError> {
        let state = self.state.as_mut().expect("calculated");
        if !run.protected.is_empty() {
            let cs = resolve(session.dataset(), mods)?;
            let runs = cs.table_runs();
            for &pc in &run.protected {
                let mut view = ChainView { forest: &mut state.forests[pc], target: &state.targets[pc] };
                let (_, worst) = simulate(&mut view, &cs, &runs);
                if worst > run.threshold {
                    return Ok(Outcome::OwnRejected);
                }
            }
        }
        Ok(if session.submit(state, mods)? { Outcome::Applied } else { Outcome::Rejected })
    }

    fn relax(&self, session: &mut Session<'_>, run: &mut ChainRun, session_blocked: bool) -> Result<(), CoordError> {
        let others = !session.validated_features().is_empty();
        if others && (session_blocked || run.protected.is_empty()) {
            session.relax()?;
        } else if !run.protected.is_empty() {
            run.protected.remove(0);
        } else {
            session.relax()?;
        }
        Ok(())
    }

    fn no_candidate(&self, c: usize, r: usize, i: usize) -> CoordError {
        CoordError::TargetInfeasible {
            tool: self.name.clone(),
            violations: vec![format!("{}: no candidate for entry ({},{})", self.chains[c], r + 1, i + 1)],
        }
    }

    /// Removes `m` level-`i` roots of row `r` by moving all level-`r`
    /// descendants of each plucked root under tuples that keep their roots.
    #[allow(clippy::too_many_arguments)]
    fn decrease(
        &mut self,
        session: &mut Session<'_>,
        run: &mut ChainRun,
        rng: &mut ChaCha8Rng,
        c: usize,
        r: usize,
        i: usize,
        m: u64,
    ) -> Result<(), CoordError> {
        let f = &self.state.as_ref().expect("calculated").forests[c];
        let r_u8 = r as u8;
        let n_i = f.levels[i].ids.len();
        let mut leaves = vec![0u32; n_i];
        for q in 0..f.levels[r].ids.len() as u32 {
            if let Some(a) = f.ancestor_at(r, q, i) {
                leaves[a as usize] += 1;
            }
        }
        let in_nodes: Vec<u32> = (0..n_i as u32).filter(|&p| f.levels[i].depth[p as usize] >= r_u8).collect();
        let mut cands: Vec<u32> = if i == 0 {
            in_nodes
        } else {
            let mut rep: BTreeMap<u32, u32> = BTreeMap::new();
            for &t in &in_nodes {
                let par = f.levels[i].parent[t as usize];
                let better = match rep.get(&par) {
                    None => true,
                    Some(&o) => {
                        let (lt, lo) = (leaves[t as usize], leaves[o as usize]);
                        lt > lo || (lt == lo && f.levels[i].ids[t as usize] < f.levels[i].ids[o as usize])
                    }
                };
                if better {
                    rep.insert(par, t);
                }
            }
            let reps: HashSet<u32> = rep.values().copied().collect();
            in_nodes.into_iter().filter(|t| !reps.contains(t)).collect()
        };
        cands.sort_by_key(|&t| (leaves[t as usize], f.levels[i].ids[t as usize]));
        if (cands.len() as u64) < m {
            return Err(self.no_candidate(c, r, i));
        }
        let planned: HashSet<u32> = cands.iter().take(m as usize).copied().collect();
        let mut allowed: Vec<u32> = (0..f.levels[r - 1].ids.len() as u32)
            .filter(|&y| {
                !f.levels[r - 1].children[y as usize].is_empty()
                    && f.ancestor_at(r - 1, y, i).is_some_and(|a| !planned.contains(&a))
            })
            .collect();
        let table_r = f.tables[r];
        let col_r = f.fk_cols[r];

        let mut done = 0;
        while done < m {
            let mut tried = 0;
            let mut session_blocked = false;
            let mut applied = None;
            for (idx, &t) in cands.iter().enumerate() {
                if tried >= session.max_candidates() {
                    break;
                }
                let f = &self.state.as_ref().expect("calculated").forests[c];
                if f.levels[i].depth[t as usize] < r_u8 {
                    continue;
                }
                let home = |y: u32| {
                    !f.levels[r - 1].children[y as usize].is_empty() && f.ancestor_at(r - 1, y, i).is_some_and(|a| a != t)
                };
                allowed.retain(|&y| !f.levels[r - 1].children[y as usize].is_empty());
                if !allowed.iter().any(|&y| home(y)) {
                    // the planned plucks went stale, so any other rooted home will do
                    allowed = (0..f.levels[r - 1].ids.len() as u32).filter(|&y| home(y)).collect();
                    if allowed.is_empty() {
                        continue;
                    }
                }
                let moving = f.descendants_at(i, t, r);
                let mut groups: BTreeMap<i64, Vec<i64>> = BTreeMap::new();
                for q in moving {
                    let y = loop {
                        let y = allowed[rng.random_range(0..allowed.len())];
                        if home(y) {
                            break y;
                        }
                    };
                    groups.entry(f.levels[r - 1].ids[y as usize]).or_default().push(f.levels[r].ids[q as usize]);
                }
                let mods: Vec<Modification> = groups
                    .into_iter()
                    .map(|(target, tuple_ids)| Modification::ReplaceValues {
                        table: table_r,
                        tuple_ids,
                        col_indexes: vec![col_r],
                        values: vec![Cell::Int(target)],
                    })
                    .collect();
                tried += 1;
                match self.try_batch(session, run, &mods)? {
                    Outcome::Applied => {
                        applied = Some(idx);
                        break;
                    }
                    Outcome::Rejected => session_blocked = true,
                    Outcome::OwnRejected => {}
                }
            }
            match applied {
                Some(idx) => {
                    cands.remove(idx);
                    done += 1;
                }
                None if tried == 0 => return Err(self.no_candidate(c, r, i)),
                None => self.relax(session, run, session_blocked)?,
            }
        }
        Ok(())
    }

    /// Adds `m` level-`i` roots of row `r`: each candidate receives a spare
    /// level-`r` tuple below it, after being re-parented under a root when
    /// its own parent is not one.
    #[allow(clippy::too_many_arguments)]
    fn increase(
        &mut self,
        session: &mut Session<'_>,
        run: &mut ChainRun,
        rng: &mut ChaCha8Rng,
        c: usize,
        r: usize,
        i: usize,
        m: u64,
    ) -> Result<(), CoordError> {
        let f = &self.state.as_ref().expect("calculated").forests[c];
        let r_u8 = r as u8;
        let lv = &f.levels[i];
        let mut free: Vec<u32> = Vec::new();
        for a in 0..lv.ids.len() as u32 {
            if lv.depth[a as usize] >= r_u8 {
                let mut below = f.descendants_at(i, a, r);
                below.sort_by_key(|&q| f.levels[r].ids[q as usize]);
                free.extend_from_slice(&below[1..]);
            }
        }
        // (node, needs re-parenting)
        let mut cands: Vec<(u32, bool)> = Vec::new();
        let mut iso_cands = Vec::new();
        for t in 0..lv.ids.len() as u32 {
            if lv.depth[t as usize] as usize != r - 1 {
                continue;
            }
            if i == 0 {
                cands.push((t, false));
                continue;
            }
            let par = lv.parent[t as usize];
            if par == NONE {
                continue;
            }
            if f.levels[i - 1].depth[par as usize] >= r_u8 {
                cands.push((t, false));
            } else {
                let keeper = f.levels[i - 1].children[par as usize]
                    .iter()
                    .copied()
                    .filter(|&s| lv.depth[s as usize] as usize == r - 1)
                    .min_by_key(|&s| lv.ids[s as usize])
                    .expect("t itself qualifies");
                if keeper != t {
                    iso_cands.push((t, true));
                }
            }
        }
        cands.sort_by_key(|&(t, _)| lv.ids[t as usize]);
        iso_cands.sort_by_key(|&(t, _)| lv.ids[t as usize]);
        let bound = if i == 0 {
            cands.len()
        } else {
            let drop_prev = (0..f.levels[i - 1].ids.len()).filter(|&p| f.levels[i - 1].depth[p] as usize == r - 1).count();
            let drop_here = (0..lv.ids.len()).filter(|&p| lv.depth[p] as usize == r - 1).count();
            drop_here.saturating_sub(drop_prev)
        };
        cands.extend(iso_cands);
        if (cands.len() as u64) < m || (free.len() as u64) < m {
            return Err(self.no_candidate(c, r, i));
        }
        let roots_below: Vec<u32> = if i == 0 {
            Vec::new()
        } else {
            (0..f.levels[i - 1].ids.len() as u32).filter(|&q| f.levels[i - 1].depth[q as usize] >= r_u8).collect()
        };
        let (table_i, col_i, table_r, col_r) = (f.tables[i], f.fk_cols[i], f.tables[r], f.fk_cols[r]);

        let mut iso_moves = 0;
        let mut done = 0;
        while done < m {
            let mut tried = 0;
            let mut session_blocked = false;
            let mut applied = None;
            for (idx, &(t, iso)) in cands.iter().enumerate() {
                if tried >= session.max_candidates() {
                    break;
                }
                let f = &self.state.as_ref().expect("calculated").forests[c];
                let mut mods = Vec::with_capacity(2);
                if iso {
                    let q = roots_below[rng.random_range(0..roots_below.len())];
                    mods.push(Modification::replace_one(table_i, f.levels[i].ids[t as usize], col_i, Cell::Int(f.levels[i - 1].ids[q as usize])));
                }
                let mut x = t;
                for l in i..r - 1 {
                    x = f.levels[l].children[x as usize]
                        .iter()
                        .copied()
                        .find(|&ch| f.levels[l + 1].depth[ch as usize] as usize >= r - 1)
                        .expect("depth r-1 has a path down");
                }
                let at = rng.random_range(0..free.len());
                let leaf = free[at];
                mods.push(Modification::replace_one(
                    table_r,
                    f.levels[r].ids[leaf as usize],
                    col_r,
                    Cell::Int(f.levels[r - 1].ids[x as usize]),
                ));
                tried += 1;
                match self.try_batch(session, run, &mods)? {
                    Outcome::Applied => {
                        free.swap_remove(at);
                        applied = Some(idx);
                        break;
                    }
                    Outcome::Rejected => session_blocked = true,
                    Outcome::OwnRejected => {}
                }
            }
            match applied {
                Some(idx) => {
                    if cands[idx].1 {
                        iso_moves += 1;
                    }
                    cands.remove(idx);
                    done += 1;
                }
                None if tried == 0 => return Err(self.no_candidate(c, r, i)),
                None => self.relax(session, run, session_blocked)?,
            }
        }
        self.iso_log.push(IsoRecord { chain: c, row: r + 1, col: i + 1, moves: iso_moves, bound });
        Ok(())
    }
}
