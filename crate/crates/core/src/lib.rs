//! Scales a relational dataset to new table sizes, then tweaks it so that
//! chosen inter-table features (root counts along reference chains, foreign
//! key coappearance, user pair interactions) match targets.

pub mod chain;
pub mod coappear;
pub mod coordinator;
pub mod dataset;
pub mod error;
pub mod feature;
pub mod linear;
pub mod metrics;
pub mod modification;
pub mod overlap;
pub mod pairwise;
pub mod pipeline;
pub mod rng;
pub mod scaler;
pub mod schema;
pub mod share;
pub mod synth;
pub mod targets;

pub use chain::{enumerate_maximal_chains, ReferenceChain};
pub use coappear::{CoappearDistribution, CoappearGroup, CoappearTool};
pub use coordinator::{CoordEvent, Coordinator, CoordinatorConfig, RelaxationOrder, Session, ToolHandle, ToolRunSummary, Verdict};
pub use dataset::{Cell, Dataset, IntegrityReport, Table, Tuple, Violation};
pub use error::{CoordError, DataError, Error, FeatureError, ModificationError, OverlapError, ScaleError};
pub use feature::{FeatureKind, FeatureSnapshot, FeatureState, TweakingTool};
pub use linear::{LinearJoinMatrix, LinearTool};
pub use metrics::{ErrorReport, QuerySpec};
pub use modification::{JournalRecord, Modification};
pub use overlap::OverlapGraph;
pub use pairwise::{PairwiseDistribution, PairwiseTool};
pub use pipeline::{PipelineConfig, PipelineReport, ToolKind};
pub use scaler::{rand_scale, TableSizes};
pub use schema::{ColumnDef, ColumnKind, DatasetSchema, ForeignKeyDef, PairwiseBinding, TableSchema};
pub use share::ValueShareTool;
pub use targets::TargetSet;
