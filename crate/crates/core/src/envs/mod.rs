//! Exact discrete environments behind one interface.

mod lightsout;
mod maze;

use std::fmt;
use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use lightsout::LightsOut;
pub use maze::{Maze, MazeLayout, Move};

use crate::error::{Error, Result};
use crate::tree::Task;
use crate::Rng;

/// Environment-scoped discrete state identifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateId(pub u32);

impl StateId {
    /// Placeholder for memory slots that have not been filled yet.
    pub const NULL: StateId = StateId(u32::MAX);

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_null(self) -> bool {
        self == Self::NULL
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_null() {
            f.write_str("null")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    LightsOut,
    RoomMaze,
}

/// How tasks are keyed in the planner tables.
///
/// LightsOut is invariant under XOR translation: the task `(a, b)` with
/// subgoal `m` behaves exactly like `(a ^ b, 0)` with subgoal `m ^ b`, so the
/// planner can share one row across all translated tasks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskFrame {
    #[default]
    Absolute,
    XorTranslation,
}

impl TaskFrame {
    /// Table key for a task.
    pub fn key(self, task: &Task) -> (u32, u32) {
        match self {
            TaskFrame::Absolute => (task.init.0, task.goal.0),
            TaskFrame::XorTranslation => (task.init.0 ^ task.goal.0, 0),
        }
    }

    /// Map a frame-relative candidate state to the concrete subgoal for `task`.
    pub fn decode(self, candidate: StateId, task: &Task) -> StateId {
        match self {
            TaskFrame::Absolute => candidate,
            TaskFrame::XorTranslation => StateId(candidate.0 ^ task.goal.0),
        }
    }

    /// Inverse of [`TaskFrame::decode`].
    pub fn encode(self, subgoal: StateId, task: &Task) -> StateId {
        match self {
            TaskFrame::Absolute => subgoal,
            TaskFrame::XorTranslation => StateId(subgoal.0 ^ task.goal.0),
        }
    }
}

/// Constraint on sampled tasks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskConstraint {
    /// Any pair of states.
    Any,
    /// A task whose goal is reachable from its start. For LightsOut the goal
    /// is the all-off board. `min_distance` rejects tasks that are closer.
    Solvable { min_distance: u32 },
    /// Any pair at BFS distance of at least `d`.
    MinDistance(u32),
}

impl TaskConstraint {
    pub const SOLVABLE: TaskConstraint = TaskConstraint::Solvable { min_distance: 0 };
}

#[derive(Clone, Debug)]
enum Dynamics {
    LightsOut(LightsOut),
    Maze(Maze),
}

/// Deterministic discrete environment with exact distances.
///
/// Cloning is cheap; the distance table is shared.
#[derive(Clone, Debug)]
pub struct EnvModel {
    dynamics: Dynamics,
    /// LightsOut: press count from all-off (index by `a ^ b`).
    /// Maze: all-pairs room distances, row-major.
    distances: Arc<Vec<u8>>,
}

const UNREACHABLE: u8 = u8::MAX;

impl EnvModel {
    pub fn lightsout(side: usize) -> Result<Self> {
        let env = LightsOut::new(side)?;
        let distances = Arc::new(env.distance_table());
        Ok(Self {
            dynamics: Dynamics::LightsOut(env),
            distances,
        })
    }

    pub fn maze(layout: MazeLayout) -> Result<Self> {
        let maze = Maze::new(layout)?;
        let distances = Arc::new(maze.all_pairs_distances());
        Ok(Self {
            dynamics: Dynamics::Maze(maze),
            distances,
        })
    }

    pub fn kind(&self) -> EnvKind {
        match self.dynamics {
            Dynamics::LightsOut(_) => EnvKind::LightsOut,
            Dynamics::Maze(_) => EnvKind::RoomMaze,
        }
    }

    pub fn as_lightsout(&self) -> Option<&LightsOut> {
        match &self.dynamics {
            Dynamics::LightsOut(l) => Some(l),
            Dynamics::Maze(_) => None,
        }
    }

    pub fn as_maze(&self) -> Option<&Maze> {
        match &self.dynamics {
            Dynamics::Maze(m) => Some(m),
            Dynamics::LightsOut(_) => None,
        }
    }

    pub fn state_count(&self) -> usize {
        match &self.dynamics {
            Dynamics::LightsOut(l) => l.state_count(),
            Dynamics::Maze(m) => m.room_count(),
        }
    }

    pub fn action_count(&self) -> usize {
        match &self.dynamics {
            Dynamics::LightsOut(l) => l.action_count(),
            Dynamics::Maze(_) => 4,
        }
    }

    pub fn states(&self) -> impl Iterator<Item = StateId> {
        (0..self.state_count() as u32).map(StateId)
    }

    /// Frame the planner should key its tables with.
    pub fn task_frame(&self) -> TaskFrame {
        match self.dynamics {
            Dynamics::LightsOut(_) => TaskFrame::XorTranslation,
            Dynamics::Maze(_) => TaskFrame::Absolute,
        }
    }

    pub fn check_state(&self, state: StateId) -> Result<()> {
        if state.index() < self.state_count() {
            Ok(())
        } else {
            Err(Error::InvalidState(state))
        }
    }

    pub fn step(&self, state: StateId, action: usize) -> Result<StateId> {
        self.check_state(state)?;
        if action >= self.action_count() {
            return Err(Error::InvalidAction {
                action,
                count: self.action_count(),
            });
        }
        Ok(match &self.dynamics {
            Dynamics::LightsOut(l) => StateId(state.0 ^ l.press_masks()[action]),
            Dynamics::Maze(m) => StateId(m.step(state.0, Move::from_index(action).unwrap())),
        })
    }

    fn raw_distance(&self, from: StateId, to: StateId) -> u8 {
        match &self.dynamics {
            Dynamics::LightsOut(_) => self.distances[(from.0 ^ to.0) as usize],
            Dynamics::Maze(m) => self.distances[from.index() * m.room_count() + to.index()],
        }
    }

    /// Shortest action count from `from` to `to`, `None` if unreachable.
    pub fn distance(&self, from: StateId, to: StateId) -> Result<Option<u32>> {
        self.check_state(from)?;
        self.check_state(to)?;
        let d = self.raw_distance(from, to);
        Ok((d != UNREACHABLE).then_some(d as u32))
    }

    /// True iff `to` can be reached from `from` in at most `k` actions.
    pub fn reachable(&self, from: StateId, to: StateId, k: u32) -> Result<bool> {
        Ok(self.distance(from, to)?.is_some_and(|d| d <= k))
    }

    /// First action of a shortest path (lowest action index on ties).
    /// `None` when already there or unreachable.
    pub fn next_action_toward(&self, from: StateId, to: StateId) -> Result<Option<usize>> {
        let Some(d) = self.distance(from, to)? else {
            return Ok(None);
        };
        if d == 0 {
            return Ok(None);
        }
        for action in 0..self.action_count() {
            let next = self.step(from, action)?;
            if self.raw_distance(next, to) as u32 + 1 == d {
                return Ok(Some(action));
            }
        }
        unreachable!("a shortest path always has a first step")
    }

    /// Largest finite distance between any two states.
    pub fn diameter(&self) -> u32 {
        self.distances
            .iter()
            .filter(|&&d| d != UNREACHABLE)
            .map(|&d| d as u32)
            .max()
            .unwrap_or(0)
    }

    /// The goal used for `Solvable` LightsOut tasks.
    pub fn all_off(&self) -> StateId {
        StateId(0)
    }

    /// Uniformly random task meeting `constraint`.
    pub fn sample_task(&self, rng: &mut Rng, constraint: TaskConstraint) -> Result<Task> {
        let n = self.state_count() as u32;
        let lightsout = matches!(self.dynamics, Dynamics::LightsOut(_));
        let (min_d, fixed_goal) = match constraint {
            TaskConstraint::Any => (0, None),
            TaskConstraint::Solvable { min_distance } => {
                (min_distance, lightsout.then_some(self.all_off()))
            }
            TaskConstraint::MinDistance(d) => (d, None),
        };
        let needs_path = !matches!(constraint, TaskConstraint::Any);
        let satisfiable = match fixed_goal {
            Some(goal) => (0..n).any(|s| {
                let d = self.raw_distance(StateId(s), goal);
                d != UNREACHABLE && d as u32 >= min_d
            }),
            None => !needs_path || self.diameter() >= min_d,
        };
        if !satisfiable {
            return Err(Error::UnsatisfiableConstraint(format!("{constraint:?}")));
        }
        loop {
            let init = StateId(rng.gen_range(0..n));
            let goal = fixed_goal.unwrap_or_else(|| StateId(rng.gen_range(0..n)));
            if !needs_path {
                return Ok(Task::new(init, goal));
            }
            let d = self.raw_distance(init, goal);
            if d != UNREACHABLE && d as u32 >= min_d {
                return Ok(Task::new(init, goal));
            }
        }
    }
}
