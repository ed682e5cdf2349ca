//! Block-diagonal empirical Fisher and Optimal Brain Surgeon compensation.

mod fisher;
mod partition;
mod solve;
mod update;

pub use fisher::{damped_fisher, fisher_blocks, Damping, FisherBlocks, AUTO_DAMPING_FLOOR, AUTO_DAMPING_SCALE};
pub use partition::{make_partition, Block, BlockPartition, DEFAULT_BLOCK_SIZE};
pub use solve::{
    adjust_block_fixed, kkt_residual_fx, obs_adjust, quadratic_value, RESIDUAL_TOLERANCE, RESIDUAL_TOLERANCE_FX,
};
pub use update::{unlearn_update, BlockDelta, UpdateVector};
