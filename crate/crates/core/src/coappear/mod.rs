//! How often foreign-key combinations appear together across tables that
//! reference the same tables.

mod dist;
mod state;
mod tool;

pub use dist::{
    check_necessity_c, coappear_error, compute_coappear, detect_coappear_groups, generate_target_c, repair_target_c,
    CoappearDistribution, CoappearGroup, CoappearViolation,
};
pub use state::CoappearState;
pub use tool::CoappearTool;
