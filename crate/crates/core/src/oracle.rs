//! Brute-force ground truth.
//!
//! Everything here is written independently of the code it checks: BFS walks
//! the transition function directly, tree returns are computed by plain
//! recursion on node indices, and plan depths come from a dynamic program over
//! distances. The contraction and min-lemma checks drive the operators of
//! [`crate::returns`] with random inputs and serialize any counterexample.

use std::collections::VecDeque;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::envs::{EnvModel, StateId};
use crate::error::{Error, Result};
use crate::returns::{bellman_operator, MdpBranch, MdpNode, OperatorKind, ReturnConfig, TreeMdp};
use crate::tree::{Task, TreeTrajectory};
use crate::Rng;

/// Shortest action count from `from` to every state (`None` if unreachable).
pub fn bfs_from(env: &EnvModel, from: StateId) -> Result<Vec<Option<u32>>> {
    env.check_state(from)?;
    let mut dist = vec![None; env.state_count()];
    dist[from.index()] = Some(0);
    let mut queue = VecDeque::from([from]);
    while let Some(s) = queue.pop_front() {
        let d = dist[s.index()].expect("queued states have distances");
        for a in 0..env.action_count() {
            let t = env.step(s, a)?;
            if dist[t.index()].is_none() {
                dist[t.index()] = Some(d + 1);
                queue.push_back(t);
            }
        }
    }
    Ok(dist)
}

pub fn bfs_distance(env: &EnvModel, from: StateId, to: StateId) -> Result<Option<u32>> {
    env.check_state(to)?;
    Ok(bfs_from(env, from)?[to.index()])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    Mc,
    OneStep,
    Lambda,
}

/// Recursive transcription of the tree return for every node.
pub fn oracle_tree_return(
    tree: &TreeTrajectory,
    values: &[f64],
    cfg: &ReturnConfig,
    kind: OracleKind,
) -> Vec<f64> {
    (0..tree.terminal.len())
        .map(|i| oracle_node_return(tree, values, cfg, kind, i))
        .collect()
}

fn oracle_node_return(
    tree: &TreeTrajectory,
    values: &[f64],
    cfg: &ReturnConfig,
    kind: OracleKind,
    i: usize,
) -> f64 {
    if tree.terminal[i] {
        return 0.0;
    }
    let left = 2 * i + 1;
    if left >= tree.terminal.len() {
        return match kind {
            OracleKind::Mc => 0.0,
            _ => values[i],
        };
    }
    let lambda = match kind {
        OracleKind::Mc => 1.0,
        OracleKind::OneStep => 0.0,
        OracleKind::Lambda => cfg.lambda,
    };
    let mut best = f64::INFINITY;
    for c in [left, left + 1] {
        let v = if tree.terminal[c] { 0.0 } else { values[c] };
        let g = if lambda == 0.0 {
            0.0
        } else {
            oracle_node_return(tree, values, cfg, kind, c)
        };
        let through = tree.rewards[c] + cfg.gamma * ((1.0 - lambda) * v + lambda * g);
        if through < best {
            best = through;
        }
    }
    best
}

/// Random tree of the given depth: terminal flags are drawn with probability
/// `p_terminal` and closed under descendants, rewards equal the terminal
/// flags, and values are uniform in `[-1, 2]`.
pub fn random_tree(depth: usize, p_terminal: f64, rng: &mut Rng) -> Result<TreeTrajectory> {
    let mut tree = TreeTrajectory::blank(Task::new(StateId(0), StateId(0)), depth)?;
    let n = tree.len();
    for i in 0..n {
        let inherited = i > 0 && tree.terminal[(i - 1) / 2];
        tree.terminal[i] = inherited || rng.gen::<f64>() < p_terminal;
        tree.rewards[i] = if tree.terminal[i] { 1.0 } else { 0.0 };
        tree.values[i] = rng.gen_range(-1.0..2.0);
    }
    Ok(tree)
}

/// Minimum number of decomposition levels needed to cover a distance `d`
/// with segments of at most `k_reach` steps, by dynamic programming over
/// split points.
pub fn plan_depth_for_distance(d: u32, k_reach: u32) -> Result<u32> {
    if k_reach == 0 {
        return Err(Error::Config("reach must be positive".into()));
    }
    let d = d as usize;
    let mut depth = vec![0u32; d + 1];
    for total in 0..=d {
        if total <= k_reach as usize {
            continue;
        }
        depth[total] = (1..total)
            .map(|j| 1 + depth[j].max(depth[total - j]))
            .min()
            .expect("total > 1 has a split");
    }
    Ok(depth[d])
}

/// `ceil(log2(ceil(d / k)))`, the depth when segments split evenly.
pub fn plan_depth_closed_form(d: u32, k_reach: u32) -> u32 {
    let segments = d.div_ceil(k_reach.max(1)).max(1);
    u32::BITS - (segments - 1).leading_zeros()
}

/// Minimum tree depth whose leaves are all reachable within `k_reach` for
/// `task`. Splitting on a shortest path is optimal because any subgoal
/// satisfies `d(s, w) + d(w, g) >= d(s, g)` and the depth is monotone in
/// distance.
pub fn optimal_plan_depth(env: &EnvModel, task: Task, k_reach: u32) -> Result<u32> {
    let d = bfs_distance(env, task.init, task.goal)?.ok_or(Error::Unsolvable {
        from: task.init,
        to: task.goal,
    })?;
    plan_depth_for_distance(d, k_reach)
}

/// Minimum plan depth for every ordered state pair by exhaustive search over
/// subgoal states (`u32::MAX` for unsolvable pairs). Cubic in the state
/// count per level; intended for the mazes.
pub fn plan_depth_table(env: &EnvModel, k_reach: u32) -> Result<Vec<Vec<u32>>> {
    let n = env.state_count();
    let dist: Vec<Vec<Option<u32>>> = env
        .states()
        .map(|s| bfs_from(env, s))
        .collect::<Result<_>>()?;
    let mut depth = vec![vec![u32::MAX; n]; n];
    let mut level = vec![vec![false; n]; n];
    for s in 0..n {
        for g in 0..n {
            if dist[s][g].is_some_and(|d| d <= k_reach) {
                level[s][g] = true;
                depth[s][g] = 0;
            }
        }
    }
    let mut current = 0;
    loop {
        let mut next = level.clone();
        let mut changed = false;
        for s in 0..n {
            for g in 0..n {
                if next[s][g] {
                    continue;
                }
                if (0..n).any(|w| level[s][w] && level[w][g]) {
                    next[s][g] = true;
                    depth[s][g] = current + 1;
                    changed = true;
                }
            }
        }
        if !changed {
            return Ok(depth);
        }
        level = next;
        current += 1;
    }
}

/// Scalar quadruple violating the min lemma.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinLemmaCounterexample {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinLemmaReport {
    pub samples: usize,
    pub violations: usize,
    pub counterexample: Option<MinLemmaCounterexample>,
}

impl MinLemmaReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// `|min(a, b) - min(c, d)| <= max(|a - c|, |b - d|)` on random quadruples,
/// half drawn from a wide range and half from a narrow one so that both
/// branches of each minimum are exercised.
pub fn min_lemma_check(samples: usize, rng: &mut Rng) -> MinLemmaReport {
    let mut report = MinLemmaReport {
        samples,
        violations: 0,
        counterexample: None,
    };
    for i in 0..samples {
        let scale: f64 = if i % 2 == 0 { 1e3 } else { 1.0 };
        let mut draw = || -> f64 { rng.gen_range(-scale..scale) };
        let (a, b, c, d) = (draw(), draw(), draw(), draw());
        if (a.min(b) - c.min(d)).abs() > (a - c).abs().max((b - d).abs()) {
            report.violations += 1;
            report
                .counterexample
                .get_or_insert(MinLemmaCounterexample { a, b, c, d });
        }
    }
    report
}

/// Operator input pair whose output distance exceeds the bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionCounterexample {
    pub operator: OperatorKind,
    pub mdp: TreeMdp,
    pub v1: Vec<f64>,
    pub v2: Vec<f64>,
    pub ratio: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub trials: usize,
    /// Trials with `V1 == V2`, where the ratio is undefined.
    pub skipped: usize,
    pub max_ratio_t0: f64,
    pub max_ratio_tlambda: f64,
    pub bound_t0: f64,
    pub bound_tlambda: f64,
    pub violations: usize,
    pub counterexample: Option<ContractionCounterexample>,
    pub min_lemma: MinLemmaReport,
}

impl ContractionReport {
    pub fn passed(&self) -> bool {
        self.violations == 0 && self.min_lemma.passed()
    }

    pub fn counterexample_json(&self) -> Option<String> {
        self.counterexample
            .as_ref()
            .map(|c| serde_json::to_string_pretty(c).expect("counterexample serializes"))
    }
}

/// Absolute slack for floating-point rounding in the operator comparison.
pub const CONTRACTION_SLACK: f64 = 1e-12;

/// Random tree MDP: up to `max_nodes` nodes, policy supports of one to three
/// branches, rewards in `{0, 1}`. Terminal nodes are absorbing, so closure
/// under descendants holds trivially. Children point forward in index order
/// unless `cyclic`, in which case any node may be a child.
pub fn random_tree_mdp(max_nodes: usize, cyclic: bool, rng: &mut Rng) -> TreeMdp {
    let n = rng.gen_range(2..=max_nodes.max(2));
    let mut nodes = Vec::with_capacity(n);
    for i in 0..n {
        let last = i + 1 == n;
        if (last && !cyclic) || rng.gen::<f64>() < 0.25 {
            nodes.push(MdpNode {
                terminal: true,
                branches: vec![],
            });
            continue;
        }
        let k = rng.gen_range(1..=3);
        let mut weights: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
        let z: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= z);
        let child = |rng: &mut Rng| {
            if cyclic {
                rng.gen_range(0..n)
            } else {
                rng.gen_range(i + 1..n)
            }
        };
        let branches = weights
            .into_iter()
            .map(|prob| MdpBranch {
                prob,
                left: child(rng),
                right: child(rng),
                reward_left: rng.gen_range(0..2) as f64,
                reward_right: rng.gen_range(0..2) as f64,
            })
            .collect();
        nodes.push(MdpNode {
            terminal: false,
            branches,
        });
    }
    TreeMdp { nodes }
}

fn sup_gap(a: &[f64], b: &[f64]) -> f64 {
    let mut m: f64 = 0.0;
    for i in 0..a.len() {
        m = m.max((a[i] - b[i]).abs());
    }
    m
}

/// Randomized check of the sup-norm contraction of the one-step and lambda
/// operators, plus the min lemma on `10 * trials` quadruples. A fifth of the
/// MDPs contain cycles.
pub fn contraction_check(
    cfg: &ReturnConfig,
    trials: usize,
    rng: &mut Rng,
) -> Result<ContractionReport> {
    cfg.validate()?;
    if trials == 0 {
        return Err(Error::Config("at least one trial is required".into()));
    }
    let bound_t0 = cfg.gamma;
    let bound_tlambda = cfg.gamma * (1.0 - cfg.lambda) / (1.0 - cfg.gamma * cfg.lambda);
    let mut report = ContractionReport {
        trials,
        skipped: 0,
        max_ratio_t0: 0.0,
        max_ratio_tlambda: 0.0,
        bound_t0,
        bound_tlambda,
        violations: 0,
        counterexample: None,
        min_lemma: min_lemma_check(10 * trials, rng),
    };
    for trial in 0..trials {
        let mdp = random_tree_mdp(63, trial % 5 == 4, rng);
        let n = mdp.len();
        let scale = if rng.gen::<bool>() { 1.0 } else { 1e3 };
        let v1: Vec<f64> = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
        let v2: Vec<f64> = if trial % 7 == 3 {
            v1.clone()
        } else {
            (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
        };
        // only non-terminal entries are read by the operators
        let input_gap = (0..n)
            .filter(|&i| !mdp.nodes[i].terminal)
            .fold(0.0f64, |m, i| m.max((v1[i] - v2[i]).abs()));
        if input_gap == 0.0 {
            report.skipped += 1;
            continue;
        }
        for (kind, bound) in [
            (OperatorKind::T0, bound_t0),
            (OperatorKind::TLambda, bound_tlambda),
        ] {
            let out = sup_gap(
                &bellman_operator(kind, &mdp, &v1, cfg),
                &bellman_operator(kind, &mdp, &v2, cfg),
            );
            let ratio = out / input_gap;
            match kind {
                OperatorKind::T0 => report.max_ratio_t0 = report.max_ratio_t0.max(ratio),
                _ => report.max_ratio_tlambda = report.max_ratio_tlambda.max(ratio),
            }
            if out > bound * input_gap + CONTRACTION_SLACK * (1.0 + scale) {
                report.violations += 1;
                report
                    .counterexample
                    .get_or_insert_with(|| ContractionCounterexample {
                        operator: kind,
                        mdp: mdp.clone(),
                        v1: v1.clone(),
                        v2: v2.clone(),
                        ratio,
                        bound,
                    });
            }
        }
    }
    Ok(report)
}

/// Full binary tree shape with unlabeled leaves.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Shape {
    Leaf,
    Node(Box<Shape>, Box<Shape>),
}

impl Shape {
    pub fn leaves(&self) -> usize {
        match self {
            Shape::Leaf => 1,
            Shape::Node(l, r) => l.leaves() + r.leaves(),
        }
    }

    /// Edges on the longest root-to-leaf path.
    pub fn height(&self) -> usize {
        match self {
            Shape::Leaf => 0,
            Shape::Node(l, r) => 1 + l.height().max(r.height()),
        }
    }

    /// Embed into a dense tree of depth `height`: internal shape nodes are
    /// non-terminal, shape leaves are terminal with reward 1, and everything
    /// below a leaf inherits the terminal flag.
    pub fn to_tree(&self) -> Result<TreeTrajectory> {
        let mut tree =
            TreeTrajectory::blank(Task::new(StateId(0), StateId(0)), self.height().max(1))?;
        fn mark(shape: &Shape, i: usize, tree: &mut TreeTrajectory) {
            match shape {
                Shape::Leaf => {
                    let mut stack = vec![i];
                    while let Some(j) = stack.pop() {
                        if j < tree.terminal.len() {
                            tree.terminal[j] = true;
                            tree.rewards[j] = 1.0;
                            stack.extend([2 * j + 1, 2 * j + 2]);
                        }
                    }
                }
                Shape::Node(l, r) => {
                    mark(l, 2 * i + 1, tree);
                    mark(r, 2 * i + 2, tree);
                }
            }
        }
        mark(self, 0, &mut tree);
        Ok(tree)
    }
}

/// Every full binary tree shape with exactly `leaves` leaves.
pub fn all_shapes(leaves: usize) -> Vec<Shape> {
    if leaves <= 1 {
        return vec![Shape::Leaf];
    }
    let mut out = Vec::new();
    for left in 1..leaves {
        for l in all_shapes(left) {
            for r in all_shapes(leaves - left) {
                out.push(Shape::Node(Box::new(l.clone()), Box::new(r)));
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalancedReport {
    pub leaves: usize,
    pub shapes: usize,
    pub balanced_return: f64,
    pub best_return: f64,
    /// Shapes scoring strictly above the balanced shape.
    pub counterexamples: usize,
}

impl BalancedReport {
    pub fn passed(&self) -> bool {
        self.counterexamples == 0 && self.balanced_return == self.best_return
    }
}

/// Root Monte-Carlo return, via `score`, of every shape with `leaves`
/// leaves compared with the minimum-height shape. `leaves` must be a power
/// of two.
pub fn balanced_tree_check(
    leaves: usize,
    score: impl Fn(&TreeTrajectory) -> f64,
) -> Result<BalancedReport> {
    if leaves < 2 || !leaves.is_power_of_two() {
        return Err(Error::Config(
            "leaf count must be a power of two of at least 2".into(),
        ));
    }
    let shapes = all_shapes(leaves);
    let balanced_height = leaves.trailing_zeros() as usize;
    let mut balanced_return = f64::NEG_INFINITY;
    let mut best_return = f64::NEG_INFINITY;
    let mut scores = Vec::with_capacity(shapes.len());
    for shape in &shapes {
        let g = score(&shape.to_tree()?);
        if shape.height() == balanced_height {
            balanced_return = g;
        }
        best_return = best_return.max(g);
        scores.push(g);
    }
    Ok(BalancedReport {
        leaves,
        shapes: shapes.len(),
        balanced_return,
        best_return,
        counterexamples: scores.iter().filter(|&&g| g > balanced_return).count(),
    })
}
