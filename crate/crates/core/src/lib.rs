//! Discrete hierarchical planning on exact discrete environments.
//!
//! A planning policy recursively inserts subgoals between a start and a goal
//! state, producing a binary tree of subtasks. Subtasks whose goal is reachable
//! by the low-level controller are terminal and rewarded; trees are scored with
//! a min-over-children discounted return and the policy is trained with
//! REINFORCE using a learned value baseline.
//!
//! Module map:
//!
//! - [`envs`]: LightsOut and room-maze dynamics, reachability, task sampling.
//! - [`tree`]: subtask trees, terminal marking, training and inference unrolls.
//! - [`returns`]: tree and linear return estimators, tree Bellman operators.
//! - [`policy`]: tabular softmax planner, value table, policy-gradient update.
//! - [`explorer`]: triplet-novelty exploration with a state memory.
//! - [`offline`]: expectile-regressed hierarchical values, AWR actors, goal buffer.
//! - [`oracle`]: brute-force ground truth used by tests and `oracle-check`.
//! - [`harness`]: training loops, evaluation protocol and ablations.

pub mod envs;
pub mod error;
pub mod explorer;
pub mod harness;
pub mod offline;
pub mod oracle;
pub mod policy;
pub mod returns;
pub mod tree;

pub use envs::{EnvModel, StateId, TaskConstraint};
pub use error::{Error, Result};
pub use returns::ReturnConfig;
pub use tree::{SubgoalChoice, SubgoalStack, Task, TreeTrajectory};

/// Seedable random source used across the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
