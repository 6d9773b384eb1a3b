//! Return estimators for subtask trees and linear trajectories.
//!
//! A tree node's return is the minimum over its two children of the child's
//! reward plus its discounted continuation, so a plan is worth only as much as
//! its weakest half. Terminal nodes return 0 and their value estimate is
//! treated as 0 wherever a parent bootstraps on it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tree::{children, TreeTrajectory};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReturnConfig {
    /// Tree discount.
    pub gamma: f64,
    pub lambda: f64,
    /// Discount for linear (explorer) trajectories.
    pub gamma_linear: f64,
}

impl Default for ReturnConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            lambda: 0.95,
            gamma_linear: 0.99,
        }
    }
}

impl ReturnConfig {
    pub fn validate(&self) -> Result<()> {
        let in_open = |x: f64| x > 0.0 && x < 1.0;
        if !in_open(self.gamma) || !in_open(self.gamma_linear) {
            return Err(Error::Config("discounts must lie in (0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config("lambda must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Sup-norm contraction factor of the tree lambda operator.
    pub fn lambda_contraction_factor(&self) -> f64 {
        self.gamma * (1.0 - self.lambda) / (1.0 - self.gamma * self.lambda)
    }
}

/// What a truncated (non-terminal bottom-level) node returns.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum LeafBase {
    Zero,
    Value,
}

fn masked_value(tree: &TreeTrajectory, values: &[f64], i: usize) -> f64 {
    if tree.terminal[i] {
        0.0
    } else {
        values[i]
    }
}

/// Bottom-up evaluation of
/// `G_i = (1 - T_i) * min_c (R_c + gamma * ((1 - lambda) v_c + lambda G_c))`.
fn tree_return(
    tree: &TreeTrajectory,
    values: &[f64],
    gamma: f64,
    lambda: f64,
    leaf: LeafBase,
) -> Vec<f64> {
    let n = tree.len();
    let mut g = vec![0.0; n];
    for i in (0..n).rev() {
        if tree.terminal[i] {
            continue;
        }
        if !tree.is_internal(i) {
            g[i] = match leaf {
                LeafBase::Zero => 0.0,
                LeafBase::Value => values[i],
            };
            continue;
        }
        let (l, r) = children(i);
        let through = |c: usize| {
            let v = masked_value(tree, values, c);
            tree.rewards[c] + gamma * ((1.0 - lambda) * v + lambda * g[c])
        };
        g[i] = through(l).min(through(r));
    }
    g
}

/// Monte-Carlo tree return; truncated nodes return 0.
pub fn tree_mc_return(tree: &TreeTrajectory, cfg: &ReturnConfig) -> Vec<f64> {
    let zeros = vec![0.0; tree.len()];
    tree_return(tree, &zeros, cfg.gamma, 1.0, LeafBase::Zero)
}

/// Depth-`D` return: Monte-Carlo inside the tree, value estimates substituted
/// at truncated nodes.
pub fn tree_bootstrapped_return(
    tree: &TreeTrajectory,
    values: &[f64],
    cfg: &ReturnConfig,
) -> Vec<f64> {
    tree_return(tree, values, cfg.gamma, 1.0, LeafBase::Value)
}

/// One-step tree return `(1 - T_i) * min_c (R_c + gamma * v_c)`.
pub fn tree_one_step_return(tree: &TreeTrajectory, values: &[f64], cfg: &ReturnConfig) -> Vec<f64> {
    tree_return(tree, values, cfg.gamma, 0.0, LeafBase::Value)
}

/// Tree lambda return with value bootstrap at truncated nodes.
pub fn tree_lambda_return(tree: &TreeTrajectory, values: &[f64], cfg: &ReturnConfig) -> Vec<f64> {
    tree_return(tree, values, cfg.gamma, cfg.lambda, LeafBase::Value)
}

/// Tree analogue of generalized advantage estimation: the minimum over
/// children of `delta_c + gamma * lambda * A_c`, with
/// `delta_c = R_c + gamma * v_c - v_i`.
pub fn tree_gae_advantages(tree: &TreeTrajectory, values: &[f64], cfg: &ReturnConfig) -> Vec<f64> {
    let n = tree.len();
    let mut adv = vec![0.0; n];
    for i in (0..tree.len()).rev() {
        if tree.terminal[i] || !tree.is_internal(i) {
            continue;
        }
        let (l, r) = children(i);
        let via = |c: usize| {
            let delta = tree.rewards[c] + cfg.gamma * masked_value(tree, values, c) - values[i];
            delta + cfg.gamma * cfg.lambda * adv[c]
        };
        adv[i] = via(l).min(via(r));
    }
    adv
}

/// TD(lambda) targets for a linear trajectory.
///
/// `rewards[k]` is the reward received on the transition out of step `k` and
/// `values[k]` the value of the state it lands in; the last step bootstraps on
/// its value.
pub fn linear_lambda_return(
    rewards: &[f64],
    values: &[f64],
    cfg: &ReturnConfig,
) -> Result<Vec<f64>> {
    if rewards.len() != values.len() {
        return Err(Error::LengthMismatch(rewards.len(), values.len()));
    }
    if rewards.is_empty() {
        return Err(Error::Empty("trajectory"));
    }
    let n = rewards.len();
    let mut out = vec![0.0; n];
    let mut next = values[n - 1];
    for k in (0..n).rev() {
        out[k] =
            rewards[k] + cfg.gamma_linear * ((1.0 - cfg.lambda) * values[k] + cfg.lambda * next);
        next = out[k];
    }
    Ok(out)
}

/// One policy choice at a tree-MDP node: probability and the two child nodes
/// it places the agent in, with the reward collected at each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdpBranch {
    pub prob: f64,
    pub left: usize,
    pub right: usize,
    pub reward_left: f64,
    pub reward_right: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdpNode {
    pub terminal: bool,
    /// Empty for terminal nodes; probabilities sum to 1 otherwise.
    pub branches: Vec<MdpBranch>,
}

/// Finite tree-structured MDP under a fixed stochastic planning policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeMdp {
    pub nodes: Vec<MdpNode>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OperatorKind {
    T0,
    T1,
    TLambda,
}

impl TreeMdp {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn child_value(&self, v: &[f64], c: usize) -> f64 {
        if self.nodes[c].terminal {
            0.0
        } else {
            v[c]
        }
    }

    /// Reverse topological order if the node graph is acyclic.
    fn reverse_topological(&self) -> Option<Vec<usize>> {
        let n = self.len();
        // 0 = unvisited, 1 = on stack, 2 = done
        let mut state = vec![0u8; n];
        let mut order = Vec::with_capacity(n);
        for root in 0..n {
            if state[root] != 0 {
                continue;
            }
            let mut stack = vec![(root, 0usize)];
            state[root] = 1;
            while let Some((node, edge)) = stack.pop() {
                let succ: Vec<usize> = self.nodes[node]
                    .branches
                    .iter()
                    .flat_map(|b| [b.left, b.right])
                    .collect();
                if edge < succ.len() {
                    stack.push((node, edge + 1));
                    let c = succ[edge];
                    match state[c] {
                        0 => {
                            state[c] = 1;
                            stack.push((c, 0));
                        }
                        1 => return None,
                        _ => {}
                    }
                } else {
                    state[node] = 2;
                    order.push(node);
                }
            }
        }
        Some(order)
    }
}

/// Apply a tree Bellman operator exactly (expectations enumerate the policy
/// support).
///
/// `TLambda` returns the solution `W` of
/// `W(n) = E[min_c (R_c + gamma * ((1 - lambda) V(c) + lambda W(c)))]`,
/// computed in one sweep on acyclic graphs and by fixed-point iteration
/// otherwise; `T1` is the same with `lambda = 1`.
pub fn bellman_operator(
    kind: OperatorKind,
    mdp: &TreeMdp,
    v: &[f64],
    cfg: &ReturnConfig,
) -> Vec<f64> {
    assert_eq!(v.len(), mdp.len(), "value vector must cover every node");
    let lambda = match kind {
        OperatorKind::T0 => 0.0,
        OperatorKind::T1 => 1.0,
        OperatorKind::TLambda => cfg.lambda,
    };
    let gamma = cfg.gamma;
    let backup = |node: usize, w: &[f64]| -> f64 {
        let n = &mdp.nodes[node];
        if n.terminal {
            return 0.0;
        }
        n.branches
            .iter()
            .map(|b| {
                let via = |c: usize, r: f64| {
                    let inner =
                        (1.0 - lambda) * mdp.child_value(v, c) + lambda * mdp.child_value(w, c);
                    r + gamma * inner
                };
                b.prob * via(b.left, b.reward_left).min(via(b.right, b.reward_right))
            })
            .sum()
    };
    let mut w = vec![0.0; mdp.len()];
    if lambda == 0.0 {
        return (0..mdp.len()).map(|i| backup(i, &w)).collect();
    }
    if let Some(order) = mdp.reverse_topological() {
        for i in order {
            w[i] = backup(i, &w);
        }
        return w;
    }
    // gamma * lambda contraction in W
    for _ in 0..100_000 {
        let next: Vec<f64> = (0..mdp.len()).map(|i| backup(i, &w)).collect();
        let change = sup_distance(&next, &w);
        w = next;
        if change <= 1e-15 * (1.0 + sup_norm(&w)) {
            break;
        }
    }
    w
}

pub fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}
