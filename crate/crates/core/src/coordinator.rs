//! Runs tools in order, validating every proposed modification against the
//! features of tools that ran before.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::CoordError;
use crate::feature::{FeatureState, TweakingTool};
use crate::modification::{resolve, Change, ChangeSet, JournalRecord, Modification};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RelaxationOrder {
    #[default]
    EarliestFirst,
    LatestFirst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "camelCase")]
pub struct CoordinatorConfig {
    pub e_threshold: f64,
    pub relaxation_order: RelaxationOrder,
    /// Relaxations allowed within one tool run.
    pub max_relaxation_rounds: usize,
    /// Candidate proposals a tool tries for one unit of work before asking
    /// for a relaxation.
    pub max_candidates: usize,
    pub seed: u64,
    /// Recompute every validated feature from scratch after each simulation
    /// and panic on disagreement.
    pub cross_check: bool,
}

impl Default for CoordinatorConfig {
    fn default() -> Self {
        CoordinatorConfig {
            e_threshold: 0.05,
            relaxation_order: RelaxationOrder::EarliestFirst,
            max_relaxation_rounds: 16,
            max_candidates: 64,
            seed: 0,
            cross_check: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ToolHandle(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "camelCase")]
pub enum CoordEvent {
    /// The feature was already above the threshold when the tool started.
    PreRelaxed { tool: String, feature: String, error: f64 },
    /// No candidate passed validation, so this feature stopped being checked.
    Relaxed { tool: String, feature: String },
    /// The tool accepted leaving one of its own instances off target.
    Tolerated { tool: String, instance: String, error: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ToolRunSummary {
    pub tool: String,
    pub run: usize,
    pub proposals: u64,
    pub accepted: u64,
    pub rejected: u64,
    pub relaxed: Vec<String>,
    pub repairs: Vec<String>,
    pub error_before: f64,
    pub error_after: f64,
    pub appended: BTreeMap<String, u64>,
}

#[derive(Debug, Clone)]
pub struct Verdict {
    pub accepted: bool,
    /// Simulated error of each validated feature after the batch.
    pub errors: BTreeMap<String, f64>,
    version: u64,
    mods: Vec<Modification>,
    changes: ChangeSet,
}

impl Verdict {
    pub fn changes(&self) -> &ChangeSet {
        &self.changes
    }
}

/// Tuples each tool has touched, keyed by tool name.
pub type AccessLog = BTreeMap<String, BTreeSet<(usize, i64)>>;

struct Slot {
    name: String,
    tool: Option<Box<dyn TweakingTool>>,
    /// Sequence number of the last completed run.
    applied: Option<u64>,
    runs: usize,
}

pub struct Coordinator {
    config: CoordinatorConfig,
    dataset: Dataset,
    slots: Vec<Slot>,
    journal: Vec<JournalRecord>,
    access: AccessLog,
    version: u64,
    step: u64,
    seq: u64,
    runs: Vec<ToolRunSummary>,
    events: Vec<CoordEvent>,
}

impl Coordinator {
    pub fn new(dataset: Dataset, config: CoordinatorConfig) -> Self {
        Coordinator {
            config,
            dataset,
            slots: Vec::new(),
            journal: Vec::new(),
            access: AccessLog::new(),
            version: 0,
            step: 0,
            seq: 0,
            runs: Vec::new(),
            events: Vec::new(),
        }
    }

    pub fn register(&mut self, tool: Box<dyn TweakingTool>) -> Result<ToolHandle, CoordError> {
        let name = tool.name().to_string();
        if self.handle(&name).is_some() {
            return Err(CoordError::DuplicateToolName(name));
        }
        self.slots.push(Slot { name, tool: Some(tool), applied: None, runs: 0 });
        Ok(ToolHandle(self.slots.len() - 1))
    }

    pub fn handle(&self, name: &str) -> Option<ToolHandle> {
        self.slots.iter().position(|s| s.name == name).map(ToolHandle)
    }

    pub fn config(&self) -> &CoordinatorConfig {
        &self.config
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn into_dataset(self) -> Dataset {
        self.dataset
    }

    pub fn journal(&self) -> &[JournalRecord] {
        &self.journal
    }

    pub fn access_log(&self) -> &AccessLog {
        &self.access
    }

    pub fn runs(&self) -> &[ToolRunSummary] {
        &self.runs
    }

    pub fn events(&self) -> &[CoordEvent] {
        &self.events
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn tool(&self, h: ToolHandle) -> &dyn TweakingTool {
        self.slots[h.0].tool.as_deref().expect("tool is not running")
    }

    pub fn tool_names(&self) -> Vec<String> {
        self.slots.iter().map(|s| s.name.clone()).collect()
    }

    /// Current error of every tool that has run at least once.
    pub fn feature_errors(&self) -> BTreeMap<String, f64> {
        self.slots
            .iter()
            .filter(|s| s.applied.is_some())
            .map(|s| (s.name.clone(), s.tool.as_ref().expect("idle").error()))
            .collect()
    }

    /// Runs one tool: recomputes the features of earlier tools, then lets
    /// the tool propose modifications through a validating session.
    pub fn run_tool(&mut self, h: ToolHandle) -> Result<ToolRunSummary, CoordError> {
        let mut tool = self.slots[h.0].tool.take().expect("tool is not running");
        let name = self.slots[h.0].name.clone();
        let run = self.slots[h.0].runs;
        self.slots[h.0].runs += 1;
        tool.calculate(&self.dataset);
        let repairs = match tool.prepare(&self.dataset) {
            Ok(r) => r,
            Err(e) => {
                self.slots[h.0].tool = Some(tool);
                return Err(e);
            }
        };
        let error_before = tool.error();

        let mut earlier: Vec<(u64, usize)> = Vec::new();
        for (i, s) in self.slots.iter_mut().enumerate() {
            if i == h.0 {
                continue;
            }
            if let Some(seq) = s.applied {
                s.tool.as_mut().expect("idle").calculate(&self.dataset);
                earlier.push((seq, i));
            }
        }
        earlier.sort();
        let mut validated = Vec::new();
        for (_, i) in earlier {
            let err = self.slots[i].tool.as_ref().expect("idle").error();
            if err > self.config.e_threshold {
                self.events.push(CoordEvent::PreRelaxed { tool: name.clone(), feature: self.slots[i].name.clone(), error: err });
            } else {
                validated.push(i);
            }
        }

        let tables_before: Vec<usize> = self.dataset.tables().iter().map(|t| t.len()).collect();
        let mut session = Session {
            config: &self.config,
            dataset: &mut self.dataset,
            slots: &mut self.slots,
            journal: &mut self.journal,
            access: &mut self.access,
            events: &mut self.events,
            version: &mut self.version,
            step: &mut self.step,
            tool: name.clone(),
            seed: derive_seed(self.config.seed, &format!("{name}#{run}")),
            validated,
            relaxed: Vec::new(),
            rounds: 0,
            proposals: 0,
            accepted: 0,
            rejected: 0,
        };
        let result = tool.tweak(&mut session);
        let (proposals, accepted, rejected, relaxed) =
            (session.proposals, session.accepted, session.rejected, session.relaxed);

        let error_after = tool.error();
        self.slots[h.0].tool = Some(tool);
        self.seq += 1;
        self.slots[h.0].applied = Some(self.seq);
        let appended = self
            .dataset
            .tables()
            .iter()
            .zip(tables_before)
            .filter(|(t, before)| t.len() > *before)
            .map(|(t, before)| (t.name().to_string(), (t.len() - before) as u64))
            .collect();
        let summary = ToolRunSummary {
            tool: name,
            run,
            proposals,
            accepted,
            rejected,
            relaxed,
            repairs,
            error_before,
            error_after,
            appended,
        };
        self.runs.push(summary.clone());
        result.map(|_| summary)
    }
}

/// The coordinator as seen by a running tool.
pub struct Session<'a> {
    config: &'a CoordinatorConfig,
    dataset: &'a mut Dataset,
    slots: &'a mut [Slot],
    journal: &'a mut Vec<JournalRecord>,
    access: &'a mut AccessLog,
    events: &'a mut Vec<CoordEvent>,
    version: &'a mut u64,
    step: &'a mut u64,
    tool: String,
    seed: u64,
    /// Slots whose features are checked, earliest applied first.
    validated: Vec<usize>,
    relaxed: Vec<String>,
    rounds: usize,
    proposals: u64,
    accepted: u64,
    rejected: u64,
}

impl Session<'_> {
    pub fn dataset(&self) -> &Dataset {
        self.dataset
    }

    pub fn config(&self) -> &CoordinatorConfig {
        self.config
    }

    pub fn tool_name(&self) -> &str {
        &self.tool
    }

    /// Seed for the running tool's random choices, fixed per tool and run.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn max_candidates(&self) -> usize {
        self.config.max_candidates.max(1)
    }

    pub fn validated_features(&self) -> Vec<String> {
        self.validated.iter().map(|&i| self.slots[i].name.clone()).collect()
    }

    /// Simulates `mods` on every validated feature. The batch passes when
    /// each feature stays within the threshold after every run of same-table
    /// changes.
    pub fn propose(&mut self, mods: &[Modification]) -> Result<Verdict, CoordError> {
        let changes = resolve(self.dataset, mods)?;
        self.proposals += 1;
        let runs = changes.table_runs();
        let mut accepted = true;
        let mut errors = BTreeMap::new();
        for &i in &self.validated {
            let slot = &mut self.slots[i];
            let tool = slot.tool.as_mut().expect("idle");
            let (last, worst) = simulate(tool.state(), &changes, &runs);
            if self.config.cross_check {
                let mut copy = self.dataset.clone();
                changes.apply_to(&mut copy);
                let fresh = tool.fresh_error(&copy);
                assert!(
                    (fresh - last).abs() < 1e-9,
                    "feature `{}` simulated {last} but recomputes to {fresh}",
                    slot.name
                );
            }
            if worst > self.config.e_threshold {
                accepted = false;
            }
            errors.insert(slot.name.clone(), last);
        }
        if accepted {
            self.accepted += 1;
        } else {
            self.rejected += 1;
        }
        Ok(Verdict { accepted, errors, version: *self.version, mods: mods.to_vec(), changes })
    }

    /// Applies an accepted verdict, updating every feature that has been
    /// calculated, `own` included, and logging the batch.
    pub fn apply(&mut self, own: &mut dyn FeatureState, verdict: Verdict) -> Result<(), CoordError> {
        if verdict.version != *self.version {
            return Err(CoordError::StaleVerdict { verdict: verdict.version, current: *self.version });
        }
        if !verdict.accepted {
            return Err(CoordError::NotAccepted);
        }
        verdict.changes.apply_to(self.dataset);
        *self.version += 1;
        *self.step += 1;
        for slot in self.slots.iter_mut() {
            if slot.applied.is_some() {
                if let Some(t) = slot.tool.as_mut() {
                    t.state().apply_all(&verdict.changes);
                }
            }
        }
        own.apply_all(&verdict.changes);

        let mut appended = verdict.changes.changes.iter().filter_map(|c| match c {
            Change::Append { tuple, .. } => Some(tuple.id),
            _ => None,
        });
        for m in &verdict.mods {
            let id = matches!(m, Modification::AppendTuple { .. }).then(|| appended.next()).flatten();
            self.journal.push(JournalRecord::new(self.dataset, m, id, &self.tool, *self.step));
        }
        self.access.entry(self.tool.clone()).or_default().extend(verdict.changes.touched());
        Ok(())
    }

    /// Proposes and, when accepted, applies. Returns whether it was applied.
    pub fn submit(&mut self, own: &mut dyn FeatureState, mods: &[Modification]) -> Result<bool, CoordError> {
        let verdict = self.propose(mods)?;
        if verdict.accepted {
            self.apply(own, verdict)?;
            Ok(true)
        } else {
            Ok(false)
        }
    }

    /// Stops validating one feature so that the tool can make progress.
    /// Fails when nothing is left to relax or the round budget is spent.
    pub fn relax(&mut self) -> Result<String, CoordError> {
        self.rounds += 1;
        if self.validated.is_empty() || self.rounds > self.config.max_relaxation_rounds {
            return Err(CoordError::CoordinatorExhausted { tool: self.tool.clone(), rounds: self.rounds - 1 });
        }
        let i = match self.config.relaxation_order {
            RelaxationOrder::EarliestFirst => self.validated.remove(0),
            RelaxationOrder::LatestFirst => self.validated.pop().expect("nonempty"),
        };
        let feature = self.slots[i].name.clone();
        self.events.push(CoordEvent::Relaxed { tool: self.tool.clone(), feature: feature.clone() });
        self.relaxed.push(feature.clone());
        Ok(feature)
    }

    pub fn note_tolerated(&mut self, instance: String, error: f64) {
        self.events.push(CoordEvent::Tolerated { tool: self.tool.clone(), instance, error });
    }

    /// Tries each candidate batch in order until one is applied; relaxes a
    /// feature and starts over when all are rejected. Candidates are rebuilt
    /// after each relaxation. Returns the index of the applied candidate, or
    /// `None` when `candidates` produced nothing.
    pub fn submit_first<F>(&mut self, own: &mut dyn FeatureState, mut candidates: F) -> Result<Option<usize>, CoordError>
    where
        F: FnMut(&Dataset, usize) -> Option<Vec<Modification>>,
    {
        loop {
            let limit = self.max_candidates();
            let mut tried = 0;
            while tried < limit {
                let Some(mods) = candidates(self.dataset, tried) else { break };
                if self.submit(own, &mods)? {
                    return Ok(Some(tried));
                }
                tried += 1;
            }
            if tried == 0 {
                return Ok(None);
            }
            self.relax()?;
        }
    }
}

/// Applies `changes` run by run, reading the error after each, then undoes
/// them. Returns (final error, worst error).
pub(crate) fn simulate(state: &mut dyn FeatureState, changes: &ChangeSet, runs: &[usize]) -> (f64, f64) {
    if !changes.changes.iter().any(|c| state.watches(c.table())) {
        let e = state.error();
        return (e, e);
    }
    let mut worst: f64 = 0.0;
    let mut last = state.error();
    let mut start = 0;
    for &end in runs {
        let mut touched = false;
        for c in &changes.changes[start..end] {
            if state.watches(c.table()) {
                state.apply(c);
                touched = true;
            }
        }
        if touched {
            last = state.error();
        }
        worst = worst.max(last);
        start = end;
    }
    for c in changes.changes.iter().rev() {
        if state.watches(c.table()) {
            state.revert(c);
        }
    }
    (last, worst)
}
