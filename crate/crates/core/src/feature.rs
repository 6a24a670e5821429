//! The contract between a tweaking tool and the coordinator.

use serde::Serialize;

use crate::coappear::CoappearDistribution;
use crate::coordinator::Session;
use crate::dataset::Dataset;
use crate::error::CoordError;
use crate::linear::LinearJoinMatrix;
use crate::modification::{Change, ChangeSet};
use crate::pairwise::PairwiseDistribution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum FeatureKind {
    Linear,
    Coappear,
    Pairwise,
    Share,
}

/// Incrementally maintained feature plus its target.
pub trait FeatureState {
    /// Whether changes to `table` can move this feature.
    fn watches(&self, table: usize) -> bool;
    fn apply(&mut self, change: &Change);
    /// Undoes `change`, which must be the most recent one applied.
    fn revert(&mut self, change: &Change);
    /// Distance to the target; zero when no target is set.
    fn error(&self) -> f64;

    fn apply_all(&mut self, cs: &ChangeSet) {
        for c in &cs.changes {
            if self.watches(c.table()) {
                self.apply(c);
            }
        }
    }
}

/// What a tool's feature looks like right now, for comparisons in tests and
/// reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase", tag = "kind", content = "instances")]
pub enum FeatureSnapshot {
    Linear(Vec<LinearJoinMatrix>),
    Coappear(Vec<CoappearDistribution>),
    Pairwise(Vec<PairwiseDistribution>),
    Share(Vec<f64>),
}

pub trait TweakingTool {
    fn name(&self) -> &str;
    fn kind(&self) -> FeatureKind;
    /// Recomputes the feature from scratch.
    fn calculate(&mut self, ds: &Dataset);
    fn state(&mut self) -> &mut dyn FeatureState;
    fn error(&self) -> f64;
    /// Error per instance (chain, group, binding), keyed by a readable label.
    fn instance_errors(&self) -> Vec<(String, f64)>;
    /// Makes the targets satisfiable against `ds`, repairing them if allowed.
    /// Returns a note per repaired instance.
    fn prepare(&mut self, ds: &Dataset) -> Result<Vec<String>, CoordError>;
    fn tweak(&mut self, session: &mut Session<'_>) -> Result<(), CoordError>;
    fn snapshot(&self) -> FeatureSnapshot;
    /// Feature and error computed from `ds` without touching incremental state.
    fn fresh_snapshot(&self, ds: &Dataset) -> FeatureSnapshot;
    fn fresh_error(&self, ds: &Dataset) -> f64;
}
