//! How often pairs of users respond to each other's posts.

mod dist;
mod state;
mod tool;

pub use dist::{
    check_necessity_p, compute_pairwise, generate_target_p, pairwise_error, repair_target_p, PairwiseDistribution,
    PairwiseViolation,
};
pub use state::PairwiseState;
pub use tool::{AcquiredVia, PairwiseTool, PostAcquisition};
