//! Root counts along reference chains.

mod forest;
mod matrix;
mod tool;

pub use forest::ChainForest;
pub use matrix::{
    check_necessity_l, compute_linear_matrix, generate_target_l, linear_error, repair_target_l, LinearCondition,
    LinearJoinMatrix, LinearViolation,
};
pub use tool::{resolve_chain, IsoRecord, LinearState, LinearTool};
