//! Tabular softmax planner and its critic.
//!
//! The planner keeps one logit row per task key over a fixed, ordered list of
//! candidate subgoal states. Rows are created on first update; a missing row
//! is the all-zero (uniform) row.

use std::collections::BTreeMap;
use std::hash::Hash;
use std::path::Path;

use rand::Rng as _;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::envs::{EnvModel, StateId, TaskFrame};
use crate::error::{Error, Result};
use crate::returns::{tree_gae_advantages, tree_lambda_return, ReturnConfig};
use crate::tree::{SampleMode, SubgoalChoice, Task, TreeTrajectory};
use crate::Rng;

pub const DEFAULT_LEARNING_RATE: f64 = 0.05;
pub const DEFAULT_ENTROPY_COEFF: f64 = 0.5;

type Key = (u32, u32);

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= z);
    p
}

pub fn entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>()
}

/// Actor loss for one logit row:
/// `-sum_k (A_k * log pi(z_k) + eta * H(pi))` over the `(z_k, A_k)` samples.
pub fn row_actor_loss(logits: &[f64], samples: &[(usize, f64)], eta: f64) -> f64 {
    let p = softmax(logits);
    let h = entropy(&p);
    -samples
        .iter()
        .map(|&(z, a)| a * p[z].ln() + eta * h)
        .sum::<f64>()
}

/// Gradient of [`row_actor_loss`] with respect to the logits.
pub fn row_actor_gradient(logits: &[f64], samples: &[(usize, f64)], eta: f64) -> Vec<f64> {
    let p = softmax(logits);
    let mut ascent = vec![0.0; logits.len()];
    accumulate_ascent(&p, samples, eta, &mut ascent);
    ascent.iter().map(|g| -g).collect()
}

/// Adds `sum_k A_k (onehot(z_k) - pi) + eta * dH/dlogits` for every sample.
fn accumulate_ascent(p: &[f64], samples: &[(usize, f64)], eta: f64, out: &mut [f64]) {
    let h = entropy(p);
    let n = samples.len() as f64;
    let adv_sum: f64 = samples.iter().map(|s| s.1).sum();
    for (j, o) in out.iter_mut().enumerate() {
        let log_p = if p[j] > 0.0 { p[j].ln() } else { 0.0 };
        *o += -adv_sum * p[j] - eta * n * p[j] * (log_p + h);
    }
    for &(z, a) in samples {
        out[z] += a;
    }
}

/// Squared-error critic loss `0.5 * (v - target)^2` summed over targets.
pub fn critic_loss(value: f64, targets: &[f64]) -> f64 {
    targets.iter().map(|t| 0.5 * (value - t).powi(2)).sum()
}

pub fn critic_gradient(value: f64, targets: &[f64]) -> f64 {
    targets.iter().map(|t| value - t).sum()
}

/// Lazily materialized softmax rows of fixed width, keyed by `K`.
#[derive(Clone, Debug, Default)]
pub struct LogitTable<K> {
    width: usize,
    rows: FxHashMap<K, usize>,
    arena: Vec<f64>,
}

impl<K: Copy + Eq + Hash> LogitTable<K> {
    pub fn new(width: usize) -> Self {
        Self {
            width,
            rows: FxHashMap::default(),
            arena: Vec::new(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, key: &K) -> Option<&[f64]> {
        let m = self.width;
        self.rows.get(key).map(|&r| &self.arena[r * m..(r + 1) * m])
    }

    pub fn row_mut(&mut self, key: K) -> &mut [f64] {
        let m = self.width;
        let next = self.rows.len();
        let r = *self.rows.entry(key).or_insert(next);
        if r == next {
            self.arena.resize((next + 1) * m, 0.0);
        }
        &mut self.arena[r * m..(r + 1) * m]
    }

    pub fn logits(&self, key: &K) -> Vec<f64> {
        match self.row(key) {
            Some(row) => row.to_vec(),
            None => vec![0.0; self.width],
        }
    }

    pub fn probabilities(&self, key: &K) -> Vec<f64> {
        match self.row(key) {
            Some(row) => softmax(row),
            None => vec![1.0 / self.width as f64; self.width],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&K, &[f64])> {
        let m = self.width;
        self.rows
            .iter()
            .map(move |(k, &r)| (k, &self.arena[r * m..(r + 1) * m]))
    }

    /// Gradient-ascent step on `sum_k A_k log pi(z_k) + eta * H` for one row.
    /// Returns the row's actor loss and entropy before the step.
    pub fn ascend(&mut self, key: K, samples: &[(usize, f64)], eta: f64, step: f64) -> (f64, f64) {
        let logits = self.logits(&key);
        let p = softmax(&logits);
        let loss = row_actor_loss(&logits, samples, eta);
        let mut ascent = vec![0.0; self.width];
        accumulate_ascent(&p, samples, eta, &mut ascent);
        for (l, g) in self.row_mut(key).iter_mut().zip(&ascent) {
            *l += step * g;
        }
        (loss, entropy(&p))
    }
}

/// Index drawn from `probs` by inverse CDF.
pub fn sample_index(probs: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (j, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    probs.len() - 1
}

/// Argmax, ties to the lowest index.
pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (j, p) in probs.iter().enumerate() {
        if *p > probs[best] {
            best = j;
        }
    }
    best
}

#[derive(Clone, Debug)]
pub struct PlannerPolicy {
    pub candidates: Vec<StateId>,
    pub frame: TaskFrame,
    pub entropy_coeff: f64,
    pub learning_rate: f64,
    table: LogitTable<Key>,
}

impl PartialEq for PlannerPolicy {
    fn eq(&self, other: &Self) -> bool {
        self.candidates == other.candidates
            && self.frame == other.frame
            && self.entropy_coeff == other.entropy_coeff
            && self.learning_rate == other.learning_rate
            && self.row_map() == other.row_map()
    }
}

impl PlannerPolicy {
    pub fn new(candidates: Vec<StateId>, frame: TaskFrame) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::Empty("candidate list"));
        }
        let table = LogitTable::new(candidates.len());
        Ok(Self {
            candidates,
            frame,
            entropy_coeff: DEFAULT_ENTROPY_COEFF,
            learning_rate: DEFAULT_LEARNING_RATE,
            table,
        })
    }

    /// Every state is a candidate, keyed in the environment's task frame.
    pub fn for_env(env: &EnvModel) -> Self {
        Self::new(env.states().collect(), env.task_frame()).expect("environments have states")
    }

    pub fn with_hyperparameters(mut self, learning_rate: f64, entropy_coeff: f64) -> Self {
        self.learning_rate = learning_rate;
        self.entropy_coeff = entropy_coeff;
        self
    }

    pub fn candidate_count(&self) -> usize {
        self.candidates.len()
    }

    /// Number of rows that have been materialized.
    pub fn row_count(&self) -> usize {
        self.table.len()
    }

    /// Logits for a task (zeros for unseen tasks).
    pub fn logits(&self, task: &Task) -> Vec<f64> {
        self.table.logits(&self.frame.key(task))
    }

    pub fn set_logits(&mut self, task: &Task, logits: &[f64]) -> Result<()> {
        if logits.len() != self.candidates.len() {
            return Err(Error::LengthMismatch(logits.len(), self.candidates.len()));
        }
        let key = self.frame.key(task);
        self.table.row_mut(key).copy_from_slice(logits);
        Ok(())
    }

    pub fn probabilities(&self, task: &Task) -> Vec<f64> {
        self.table.probabilities(&self.frame.key(task))
    }

    fn choice(&self, task: &Task, candidate: usize, probs: &[f64]) -> SubgoalChoice {
        SubgoalChoice {
            subgoal: self.frame.decode(self.candidates[candidate], task),
            candidate,
            log_prob: probs[candidate].ln(),
            support: probs.len(),
        }
    }

    /// Draw a subgoal from the task's softmax row.
    pub fn sample(&self, task: &Task, rng: &mut Rng) -> SubgoalChoice {
        let probs = self.probabilities(task);
        let pick = sample_index(&probs, rng);
        self.choice(task, pick, &probs)
    }

    /// Most likely subgoal, ties to the lowest candidate index.
    pub fn greedy(&self, task: &Task) -> SubgoalChoice {
        let probs = self.probabilities(task);
        self.choice(task, argmax(&probs), &probs)
    }

    pub fn choose(&self, task: &Task, mode: SampleMode, rng: &mut Rng) -> SubgoalChoice {
        match mode {
            SampleMode::Greedy => self.greedy(task),
            SampleMode::Sample => self.sample(task, rng),
        }
    }

    fn row_map(&self) -> BTreeMap<String, Vec<f64>> {
        self.table
            .iter()
            .map(|(&(a, b), row)| (format!("({a},{b})"), row.to_vec()))
            .collect()
    }

    pub fn to_checkpoint(&self) -> PolicyCheckpoint {
        PolicyCheckpoint {
            candidates: self.candidates.clone(),
            frame: self.frame,
            entropy_coeff: self.entropy_coeff,
            learning_rate: self.learning_rate,
            logits: self.row_map(),
        }
    }

    pub fn from_checkpoint(ckpt: PolicyCheckpoint) -> Result<Self> {
        let mut policy = Self::new(ckpt.candidates, ckpt.frame)?
            .with_hyperparameters(ckpt.learning_rate, ckpt.entropy_coeff);
        for (key, logits) in ckpt.logits {
            let parsed =
                parse_key(&key).ok_or_else(|| Error::Config(format!("bad policy key {key:?}")))?;
            if logits.len() != policy.candidates.len() {
                return Err(Error::LengthMismatch(logits.len(), policy.candidates.len()));
            }
            policy.table.row_mut(parsed).copy_from_slice(&logits);
        }
        Ok(policy)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(&self.to_checkpoint())?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

fn parse_key(key: &str) -> Option<Key> {
    let inner = key.strip_prefix('(')?.strip_suffix(')')?;
    let (a, b) = inner.split_once(',')?;
    Some((a.trim().parse().ok()?, b.trim().parse().ok()?))
}

/// Serialized planner: candidate ordering plus one logit row per task key.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub candidates: Vec<StateId>,
    pub frame: TaskFrame,
    pub entropy_coeff: f64,
    pub learning_rate: f64,
    pub logits: BTreeMap<String, Vec<f64>>,
}

/// Tabular critic over task keys, 0 for unseen tasks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    pub frame: TaskFrame,
    pub learning_rate: f64,
    #[serde(with = "key_map")]
    values: FxHashMap<Key, f64>,
}

mod key_map {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(
        map: &FxHashMap<Key, f64>,
        s: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        let sorted: BTreeMap<String, f64> = map
            .iter()
            .map(|(&(a, b), &v)| (format!("({a},{b})"), v))
            .collect();
        sorted.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<FxHashMap<Key, f64>, D::Error> {
        let raw = BTreeMap::<String, f64>::deserialize(d)?;
        raw.into_iter()
            .map(|(k, v)| {
                parse_key(&k)
                    .map(|key| (key, v))
                    .ok_or_else(|| serde::de::Error::custom(format!("bad value key {k:?}")))
            })
            .collect()
    }
}

impl ValueTable {
    pub fn new(frame: TaskFrame, learning_rate: f64) -> Self {
        Self {
            frame,
            learning_rate,
            values: FxHashMap::default(),
        }
    }

    pub fn for_env(env: &EnvModel) -> Self {
        Self::new(env.task_frame(), DEFAULT_LEARNING_RATE)
    }

    pub fn get(&self, task: &Task) -> f64 {
        self.values
            .get(&self.frame.key(task))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn set(&mut self, task: &Task, value: f64) {
        self.values.insert(self.frame.key(task), value);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Fill `tree.values` from the table and `tree.returns` with tree lambda
    /// returns.
    pub fn annotate(&self, tree: &mut TreeTrajectory, cfg: &ReturnConfig) {
        tree.values = tree.nodes.iter().map(|t| self.get(t)).collect();
        tree.returns = tree_lambda_return(tree, &tree.values, cfg);
    }
}

/// How per-node advantages are formed during an update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvantageEstimator {
    /// `G^lambda_i - v(n_i)`.
    #[default]
    LambdaReturn,
    /// Minimum over children of generalized advantage estimates.
    Gae,
}

/// `A_i = (1 - T_i) * (G^lambda_i - v(n_i))` on internal nodes, 0 elsewhere.
pub fn compute_advantages(
    tree: &TreeTrajectory,
    values: &ValueTable,
    cfg: &ReturnConfig,
) -> Vec<f64> {
    let v: Vec<f64> = tree.nodes.iter().map(|t| values.get(t)).collect();
    let g = tree_lambda_return(tree, &v, cfg);
    (0..tree.len())
        .map(|i| {
            if tree.is_internal(i) && !tree.terminal[i] {
                g[i] - v[i]
            } else {
                0.0
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub mean_advantage: f64,
    pub mean_entropy: f64,
    /// Non-terminal internal nodes that contributed.
    pub nodes_used: usize,
}

/// One SGD step on the planner and critic from a batch of marked trees.
///
/// Fills each tree's `values` and `returns`. Gradients are summed over the
/// contributing nodes of a tree and averaged over the batch.
pub fn update_planner(
    policy: &mut PlannerPolicy,
    values: &mut ValueTable,
    batch: &mut [TreeTrajectory],
    cfg: &ReturnConfig,
) -> Result<GradientReport> {
    update_planner_with(policy, values, batch, cfg, AdvantageEstimator::LambdaReturn)
}

pub fn update_planner_with(
    policy: &mut PlannerPolicy,
    values: &mut ValueTable,
    batch: &mut [TreeTrajectory],
    cfg: &ReturnConfig,
    estimator: AdvantageEstimator,
) -> Result<GradientReport> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    // Samples are grouped by key so each row's gradient is taken at the
    // pre-update parameters.
    let mut actor: FxHashMap<Key, Vec<(usize, f64)>> = FxHashMap::default();
    let mut critic: FxHashMap<Key, Vec<f64>> = FxHashMap::default();
    let mut report = GradientReport::default();
    for tree in batch.iter_mut() {
        values.annotate(tree, cfg);
        let adv = match estimator {
            AdvantageEstimator::LambdaReturn => compute_advantages(tree, values, cfg),
            AdvantageEstimator::Gae => tree_gae_advantages(tree, &tree.values, cfg),
        };
        for i in 0..tree.len() {
            if !tree.is_internal(i) || tree.terminal[i] {
                continue;
            }
            let Some(choice) = tree.actions[i] else {
                continue;
            };
            let key = policy.frame.key(&tree.nodes[i]);
            actor
                .entry(key)
                .or_default()
                .push((choice.candidate, adv[i]));
            critic
                .entry(values.frame.key(&tree.nodes[i]))
                .or_default()
                .push(tree.returns[i]);
            report.nodes_used += 1;
            report.mean_advantage += adv[i];
        }
    }
    let scale = 1.0 / batch.len() as f64;
    let (eta, lr) = (policy.entropy_coeff, policy.learning_rate);
    // sorted for a deterministic arena layout
    let mut keys: Vec<Key> = actor.keys().copied().collect();
    keys.sort_unstable();
    for key in keys {
        let samples = &actor[&key];
        let (loss, h) = policy.table.ascend(key, samples, eta, lr * scale);
        report.actor_loss += loss * scale;
        report.mean_entropy += h * samples.len() as f64;
    }
    for (key, targets) in critic {
        let v = values.values.get(&key).copied().unwrap_or(0.0);
        report.critic_loss += critic_loss(v, &targets) * scale;
        let next = v - values.learning_rate * scale * critic_gradient(v, &targets);
        values.values.insert(key, next);
    }
    if report.nodes_used > 0 {
        report.mean_advantage /= report.nodes_used as f64;
        report.mean_entropy /= report.nodes_used as f64;
    }
    Ok(report)
}

/// Monte-Carlo estimate of the policy-gradient contribution of a state-only
/// baseline `b` at one task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineStatistic {
    /// Empirical mean of `b * (onehot(z) - pi)`.
    pub mean_gradient: Vec<f64>,
    pub norm: f64,
    /// Norm of the analytic per-component standard errors
    /// `|b| * sqrt(pi_j (1 - pi_j) / n)`.
    pub standard_error_norm: f64,
    pub samples: usize,
}

impl BaselineStatistic {
    /// Within `k` standard errors of zero (exact zero always passes).
    pub fn within(&self, k: f64) -> bool {
        self.norm == 0.0 || self.norm < k * self.standard_error_norm
    }
}

pub fn baseline_invariance_check(
    policy: &PlannerPolicy,
    task: &Task,
    baseline: f64,
    n_samples: usize,
    rng: &mut Rng,
) -> Result<BaselineStatistic> {
    if n_samples == 0 {
        return Err(Error::Empty("samples"));
    }
    let probs = policy.probabilities(task);
    let mut counts = vec![0usize; probs.len()];
    for _ in 0..n_samples {
        counts[policy.sample(task, rng).candidate] += 1;
    }
    let n = n_samples as f64;
    let mean_gradient: Vec<f64> = counts
        .iter()
        .zip(&probs)
        .map(|(&c, &p)| baseline * (c as f64 / n - p))
        .collect();
    let norm = mean_gradient.iter().map(|g| g * g).sum::<f64>().sqrt();
    let standard_error_norm = probs
        .iter()
        .map(|p| baseline * baseline * p * (1.0 - p) / n)
        .sum::<f64>()
        .sqrt();
    Ok(BaselineStatistic {
        mean_gradient,
        norm,
        standard_error_norm,
        samples: n_samples,
    })
}
