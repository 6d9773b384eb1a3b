//! Subtask trees.
//!
//! Nodes are stored densely in level order: the root is node 0 and the
//! children of node `i` are `2i + 1` (first half of the task) and `2i + 2`
//! (second half). A tree of depth `D` has `2^(D+1) - 1` nodes, of which the
//! first `2^D - 1` are internal.

use serde::{Deserialize, Serialize};

use crate::envs::{EnvModel, StateId};
use crate::error::{Error, Result};
use crate::policy::PlannerPolicy;
use crate::Rng;

/// Ordered pair of states: start here, end there.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Task {
    pub init: StateId,
    pub goal: StateId,
}

impl Task {
    pub fn new(init: StateId, goal: StateId) -> Self {
        Self { init, goal }
    }
}

/// A subgoal drawn from the planner at one node.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubgoalChoice {
    pub subgoal: StateId,
    /// Index into the policy's candidate list.
    pub candidate: usize,
    pub log_prob: f64,
    /// Number of candidates the distribution was over.
    pub support: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMode {
    /// Distribution argmax, ties to the lowest candidate index.
    Greedy,
    #[default]
    Sample,
}

pub fn node_count(depth: usize) -> usize {
    (1 << (depth + 1)) - 1
}

pub fn internal_count(depth: usize) -> usize {
    (1 << depth) - 1
}

pub fn parent(i: usize) -> Option<usize> {
    (i > 0).then(|| (i - 1) / 2)
}

pub fn children(i: usize) -> (usize, usize) {
    (2 * i + 1, 2 * i + 2)
}

/// Depth of node `i` (root is 0).
pub fn node_depth(i: usize) -> usize {
    (usize::BITS - 1 - (i + 1).leading_zeros()) as usize
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeTrajectory {
    pub depth: usize,
    pub nodes: Vec<Task>,
    /// One entry per internal node; `None` where nothing was sampled because
    /// the node was already terminal.
    pub actions: Vec<Option<SubgoalChoice>>,
    pub terminal: Vec<bool>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub returns: Vec<f64>,
}

impl TreeTrajectory {
    /// A tree of the given depth with every node set to `task` and no marks.
    pub fn blank(task: Task, depth: usize) -> Result<Self> {
        if depth == 0 {
            return Err(Error::Config("tree depth must be at least 1".into()));
        }
        let n = node_count(depth);
        Ok(Self {
            depth,
            nodes: vec![task; n],
            actions: vec![None; internal_count(depth)],
            terminal: vec![false; n],
            rewards: vec![0.0; n],
            values: vec![0.0; n],
            returns: vec![0.0; n],
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_internal(&self, i: usize) -> bool {
        i < internal_count(self.depth)
    }

    /// Non-terminal node at the bottom level.
    pub fn is_truncated(&self, i: usize) -> bool {
        !self.is_internal(i) && !self.terminal[i]
    }

    /// Every branch ends in a terminal node.
    pub fn is_valid_plan(&self) -> bool {
        (internal_count(self.depth)..self.len()).all(|i| self.terminal[i])
    }

    /// Terminal nodes whose parent is not terminal, left to right. These are
    /// the segments a controller executes, in order.
    pub fn frontier(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.collect_frontier(0, &mut out);
        out
    }

    fn collect_frontier(&self, i: usize, out: &mut Vec<usize>) {
        if i >= self.len() {
            return;
        }
        if self.terminal[i] {
            out.push(i);
            return;
        }
        let (l, r) = children(i);
        self.collect_frontier(l, out);
        self.collect_frontier(r, out);
    }

    fn set_children(&mut self, i: usize, subgoal: StateId) {
        let (l, r) = children(i);
        let task = self.nodes[i];
        self.nodes[l] = Task::new(task.init, subgoal);
        self.nodes[r] = Task::new(subgoal, task.goal);
    }

    /// Copy the parent's task into both children (used below terminal nodes).
    fn copy_down(&mut self, i: usize) {
        let (l, r) = children(i);
        self.nodes[l] = self.nodes[i];
        self.nodes[r] = self.nodes[i];
    }

    pub fn trace(&self) -> TreeTrace {
        TreeTrace {
            depth: self.depth,
            nodes: self.nodes.iter().map(|t| [t.init, t.goal]).collect(),
            terminal: self.terminal.clone(),
            rewards: self.rewards.clone(),
            returns: self.returns.clone(),
        }
    }
}

/// JSON dump of a tree for external visualization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeTrace {
    pub depth: usize,
    pub nodes: Vec<[StateId; 2]>,
    pub terminal: Vec<bool>,
    pub rewards: Vec<f64>,
    pub returns: Vec<f64>,
}

/// Full unroll: a subgoal is sampled at every internal node.
pub fn unroll_training_tree(
    policy: &PlannerPolicy,
    task: Task,
    depth: usize,
    rng: &mut Rng,
) -> Result<TreeTrajectory> {
    let mut tree = TreeTrajectory::blank(task, depth)?;
    for i in 0..internal_count(depth) {
        let choice = policy.sample(&tree.nodes[i], rng);
        tree.set_children(i, choice.subgoal);
        tree.actions[i] = Some(choice);
    }
    Ok(tree)
}

/// Terminal flags and default 0/1 rewards.
///
/// A node is terminal if its parent is, or if its goal is reachable from its
/// start within `k_reach` steps.
pub fn mark_terminal(tree: &mut TreeTrajectory, env: &EnvModel, k_reach: u32) -> Result<()> {
    for i in 0..tree.len() {
        let inherited = parent(i).is_some_and(|p| tree.terminal[p]);
        let task = tree.nodes[i];
        let reachable = env.reachable(task.init, task.goal, k_reach)?;
        tree.terminal[i] = inherited || reachable;
        tree.rewards[i] = if tree.terminal[i] { 1.0 } else { 0.0 };
    }
    Ok(())
}

/// Unroll and mark in one pass. Nodes below a terminal node are not
/// expanded: their children receive copies of the parent task.
pub fn unroll_marked_tree(
    policy: &PlannerPolicy,
    env: &EnvModel,
    task: Task,
    depth: usize,
    k_reach: u32,
    mode: SampleMode,
    rng: &mut Rng,
) -> Result<TreeTrajectory> {
    let mut tree = TreeTrajectory::blank(task, depth)?;
    tree.terminal[0] = env.reachable(task.init, task.goal, k_reach)?;
    for i in 0..internal_count(depth) {
        let (l, r) = children(i);
        if tree.terminal[i] {
            tree.copy_down(i);
            tree.terminal[l] = true;
            tree.terminal[r] = true;
        } else {
            let choice = policy.choose(&tree.nodes[i], mode, rng);
            tree.set_children(i, choice.subgoal);
            tree.actions[i] = Some(choice);
            for c in [l, r] {
                let t = tree.nodes[c];
                tree.terminal[c] = env.reachable(t.init, t.goal, k_reach)?;
            }
        }
    }
    for i in 0..tree.len() {
        tree.rewards[i] = if tree.terminal[i] { 1.0 } else { 0.0 };
    }
    Ok(tree)
}

/// Subgoals from leftmost-branch inference, outermost first.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubgoalStack {
    /// `subgoals[0]` is the task goal; each later entry splits the task
    /// from the start to the previous entry.
    pub subgoals: Vec<StateId>,
    /// The last entry is reachable from the start.
    pub complete: bool,
    pub policy_calls: usize,
}

impl SubgoalStack {
    /// The subgoal handed to the controller.
    pub fn target(&self) -> StateId {
        *self.subgoals.last().expect("stack always holds the goal")
    }

    pub fn depth(&self) -> usize {
        self.subgoals.len() - 1
    }
}

/// Decompose only the first half of the task until a subgoal within
/// `k_reach` steps of the start is found, for at most `max_depth` policy calls.
pub fn unroll_inference(
    policy: &PlannerPolicy,
    env: &EnvModel,
    task: Task,
    max_depth: usize,
    k_reach: u32,
    mode: SampleMode,
    rng: &mut Rng,
) -> Result<SubgoalStack> {
    if max_depth == 0 {
        return Err(Error::Config("inference depth must be at least 1".into()));
    }
    let mut subgoals = vec![task.goal];
    let mut goal = task.goal;
    let mut calls = 0;
    loop {
        if env.reachable(task.init, goal, k_reach)? {
            return Ok(SubgoalStack {
                subgoals,
                complete: true,
                policy_calls: calls,
            });
        }
        if calls == max_depth {
            return Ok(SubgoalStack {
                subgoals,
                complete: false,
                policy_calls: calls,
            });
        }
        goal = policy
            .choose(&Task::new(task.init, goal), mode, rng)
            .subgoal;
        subgoals.push(goal);
        calls += 1;
    }
}
