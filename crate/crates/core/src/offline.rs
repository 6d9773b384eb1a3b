//! Offline hierarchical planning from a fixed dataset.
//!
//! Two goal-conditioned value tables are regressed with an expectile loss: a
//! high-level value `V^h(s, g)` trained toward a one-step tree return through
//! the trajectory's midway state, and a low-level value `V^l(s, g)` trained by
//! temporal differences. A manager proposes subgoals and a worker proposes
//! actions; both are tabular advantage-weighted regressions (AWR), stored as
//! weighted counts, which is the exact maximizer of the weighted
//! log-likelihood for a categorical table. Planning snaps manager proposals
//! to a farthest-point-sampled buffer of landmark states and stops
//! decomposing once a normalized low-level value clears a threshold.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng as _;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::envs::{EnvModel, StateId};
use crate::error::{Error, Result};
use crate::tree::{SubgoalStack, Task};
use crate::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OfflineConfig {
    /// Expectile.
    pub tau: f64,
    pub beta_awr: f64,
    pub gamma_h: f64,
    pub gamma_l: f64,
    /// Normalized low-level value above which a subgoal counts as reachable.
    pub theta: f64,
    pub buffer_capacity: usize,
    /// A subtask spanning at most this many dataset steps is rewarded.
    pub k_subgoal: usize,
    pub weight_clip: f64,
    /// Step size of the tabular expectile updates.
    pub value_learning_rate: f64,
    /// Updates between refreshes of the frozen high-level target table.
    pub target_update_every: usize,
    /// Half-life, in updates, of the running low-level value statistics.
    pub stats_half_life: f64,
}

impl Default for OfflineConfig {
    fn default() -> Self {
        Self {
            tau: 0.7,
            beta_awr: 3.0,
            gamma_h: 0.9,
            gamma_l: 0.99,
            theta: -2.0,
            buffer_capacity: 256,
            k_subgoal: 1,
            weight_clip: 100.0,
            value_learning_rate: 0.1,
            target_update_every: 1000,
            stats_half_life: 1000.0,
        }
    }
}

impl OfflineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config("expectile must lie in (0, 1)".into()));
        }
        for g in [self.gamma_h, self.gamma_l] {
            if !(g > 0.0 && g < 1.0) {
                return Err(Error::Config("discounts must lie in (0, 1)".into()));
            }
        }
        if self.buffer_capacity == 0 || self.k_subgoal == 0 {
            return Err(Error::Config(
                "buffer capacity and subgoal span must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// `|tau - 1[u < 0]| * u^2`.
pub fn expectile_loss(u: f64, tau: f64) -> f64 {
    expectile_weight(u, tau) * u * u
}

/// Derivative of [`expectile_loss`] with respect to `u`.
pub fn expectile_grad(u: f64, tau: f64) -> f64 {
    2.0 * expectile_weight(u, tau) * u
}

fn expectile_weight(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        1.0 - tau
    } else {
        tau
    }
}

/// Running mean and variance with exponential forgetting.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: f64,
    pub var: f64,
    pub count: u64,
    /// Per-update forgetting factor.
    alpha: f64,
}

impl RunningStats {
    pub fn with_half_life(half_life: f64) -> Self {
        Self {
            mean: 0.0,
            var: 0.0,
            count: 0,
            alpha: 1.0 - 0.5f64.powf(1.0 / half_life.max(1.0)),
        }
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        // average exactly until the window fills, then forget exponentially
        let a = (1.0 / self.count as f64).max(self.alpha);
        let delta = x - self.mean;
        self.mean += a * delta;
        self.var = (1.0 - a) * (self.var + a * delta * delta);
    }

    pub fn std(&self) -> f64 {
        self.var.sqrt().max(1e-6)
    }

    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.mean) / self.std()
    }
}

/// Dense `(s, g)` tables over a state space of size `n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HierValues {
    pub n: usize,
    pub v_high: Vec<f64>,
    pub v_high_target: Vec<f64>,
    pub v_low: Vec<f64>,
    /// Statistics of `V^l` on dataset pairs `k_subgoal` steps apart.
    pub v_low_stats: RunningStats,
    high_updates: usize,
}

impl HierValues {
    pub fn new(n: usize, cfg: &OfflineConfig) -> Self {
        Self {
            n,
            v_high: vec![0.0; n * n],
            v_high_target: vec![0.0; n * n],
            v_low: vec![0.0; n * n],
            v_low_stats: RunningStats::with_half_life(cfg.stats_half_life),
            high_updates: 0,
        }
    }

    fn idx(&self, s: StateId, g: StateId) -> usize {
        s.index() * self.n + g.index()
    }

    pub fn high(&self, s: StateId, g: StateId) -> f64 {
        self.v_high[self.idx(s, g)]
    }

    pub fn low(&self, s: StateId, g: StateId) -> f64 {
        self.v_low[self.idx(s, g)]
    }

    pub fn set_low(&mut self, s: StateId, g: StateId, v: f64) {
        let i = self.idx(s, g);
        self.v_low[i] = v;
    }

    pub fn set_high(&mut self, s: StateId, g: StateId, v: f64) {
        let i = self.idx(s, g);
        self.v_high[i] = v;
    }

    /// `(V^l - mu) / sigma`.
    pub fn normalized_low(&self, s: StateId, g: StateId) -> f64 {
        self.v_low_stats.normalize(self.low(s, g))
    }

    /// Value-based distance `-V^l(s, g)`.
    pub fn distance(&self, s: StateId, g: StateId) -> f64 {
        -self.low(s, g)
    }

    /// `min(V^h(s, w), V^h(w, g)) - V^h(s, g)`.
    pub fn high_advantage(&self, s: StateId, w: StateId, g: StateId) -> f64 {
        self.high(s, w).min(self.high(w, g)) - self.high(s, g)
    }

    /// One-step tree return through `w` on the frozen table, with binary
    /// rewards for subtasks short enough to be reachable.
    pub fn high_target(
        &self,
        s: StateId,
        w: StateId,
        g: StateId,
        reach_left: bool,
        reach_right: bool,
        gamma_h: f64,
    ) -> f64 {
        let r = |b: bool| if b { 1.0 } else { 0.0 };
        let left = r(reach_left) + gamma_h * self.v_high_target[self.idx(s, w)];
        let right = r(reach_right) + gamma_h * self.v_high_target[self.idx(w, g)];
        left.min(right)
    }

    fn sync_target(&mut self) {
        self.v_high_target.copy_from_slice(&self.v_high);
    }
}

/// One logged offline episode: `states.len() == actions.len() + 1`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OfflineEpisode {
    pub states: Vec<StateId>,
    pub actions: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub episodes: usize,
    pub episode_len: usize,
    /// Probability of a uniformly random action instead of the expert's.
    pub epsilon: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            episodes: 2000,
            episode_len: 10,
            epsilon: 0.3,
        }
    }
}

/// Noisy shortest-path expert that picks a fresh random goal whenever it
/// arrives. The defaults log many short episodes, so distant state pairs
/// rarely share a trajectory and long tasks require stitching.
pub fn generate_dataset(
    env: &EnvModel,
    cfg: &DatasetConfig,
    rng: &mut Rng,
) -> Result<Vec<OfflineEpisode>> {
    if cfg.episode_len == 0 {
        return Err(Error::Config("episodes need at least one step".into()));
    }
    let n = env.state_count() as u32;
    let mut out = Vec::with_capacity(cfg.episodes);
    for _ in 0..cfg.episodes {
        let mut s = StateId(rng.gen_range(0..n));
        let mut goal = StateId(rng.gen_range(0..n));
        let mut states = vec![s];
        let mut actions = Vec::with_capacity(cfg.episode_len);
        for _ in 0..cfg.episode_len {
            while goal == s {
                goal = StateId(rng.gen_range(0..n));
            }
            let a = if rng.gen::<f64>() < cfg.epsilon {
                rng.gen_range(0..env.action_count())
            } else {
                env.next_action_toward(s, goal)?.unwrap_or(0)
            };
            s = env.step(s, a)?;
            states.push(s);
            actions.push(a);
        }
        out.push(OfflineEpisode { states, actions });
    }
    Ok(out)
}

pub fn write_offline_dataset(path: impl AsRef<Path>, episodes: &[OfflineEpisode]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for ep in episodes {
        serde_json::to_writer(&mut w, ep)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_offline_dataset(path: impl AsRef<Path>) -> Result<Vec<OfflineEpisode>> {
    let r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            let ep: OfflineEpisode = serde_json::from_str(&line)?;
            if ep.states.len() != ep.actions.len() + 1 {
                return Err(Error::LengthMismatch(ep.states.len(), ep.actions.len() + 1));
            }
            out.push(ep);
        }
    }
    Ok(out)
}

fn check_dataset(dataset: &[OfflineEpisode], min_len: usize) -> Result<()> {
    if dataset.iter().all(|ep| ep.actions.len() < min_len) {
        return Err(Error::Empty("dataset"));
    }
    Ok(())
}

fn pick_episode<'a>(
    dataset: &'a [OfflineEpisode],
    min_len: usize,
    rng: &mut Rng,
) -> &'a OfflineEpisode {
    loop {
        let ep = &dataset[rng.gen_range(0..dataset.len())];
        if ep.actions.len() >= min_len {
            return ep;
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub mean_loss: f64,
    pub updates: usize,
}

/// Expectile regression of `V^h` toward the one-step tree return through the
/// midway state of random in-trajectory pairs at least two steps apart.
pub fn train_high_value(
    values: &mut HierValues,
    dataset: &[OfflineEpisode],
    cfg: &OfflineConfig,
    updates: usize,
    rng: &mut Rng,
) -> Result<LossStats> {
    check_dataset(dataset, 2)?;
    let mut total = 0.0;
    for _ in 0..updates {
        let ep = pick_episode(dataset, 2, rng);
        let len = ep.states.len();
        let t = rng.gen_range(0..len - 2);
        let g = rng.gen_range(t + 2..len);
        let w = (t + g) / 2;
        let (st, sw, sg) = (ep.states[t], ep.states[w], ep.states[g]);
        let target = values.high_target(
            st,
            sw,
            sg,
            w - t <= cfg.k_subgoal,
            g - w <= cfg.k_subgoal,
            cfg.gamma_h,
        );
        let i = values.idx(st, sg);
        let u = target - values.v_high[i];
        total += expectile_loss(u, cfg.tau);
        values.v_high[i] += cfg.value_learning_rate * expectile_grad(u, cfg.tau);
        values.high_updates += 1;
        if values.high_updates % cfg.target_update_every.max(1) == 0 {
            values.sync_target();
        }
    }
    Ok(LossStats {
        mean_loss: total / updates.max(1) as f64,
        updates,
    })
}

/// Goal for a low-level sample: a later state of the same trajectory.
fn hindsight_goal(ep: &OfflineEpisode, t: usize, rng: &mut Rng) -> StateId {
    ep.states[rng.gen_range(t + 1..ep.states.len())]
}

/// Tabular AWR policy: per-key weighted counts over a fixed set of outputs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AwrTable {
    width: usize,
    weights: FxHashMap<(u32, u32), Vec<f64>>,
}

impl AwrTable {
    pub fn new(width: usize) -> Self {
        Self {
            width,
            weights: FxHashMap::default(),
        }
    }

    pub fn add(&mut self, s: StateId, g: StateId, output: usize, weight: f64) {
        let width = self.width;
        self.weights
            .entry((s.0, g.0))
            .or_insert_with(|| vec![0.0; width])[output] += weight;
    }

    /// Normalized weighted counts, `None` if the key was never trained.
    pub fn probabilities(&self, s: StateId, g: StateId) -> Option<Vec<f64>> {
        let row = self.weights.get(&(s.0, g.0))?;
        let z: f64 = row.iter().sum();
        (z > 0.0).then(|| row.iter().map(|w| w / z).collect())
    }

    /// Highest-weight output, ties to the lowest index.
    pub fn greedy(&self, s: StateId, g: StateId) -> Option<usize> {
        self.probabilities(s, g).map(|p| crate::policy::argmax(&p))
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// `exp(beta * advantage)` clipped at `clip`.
pub fn awr_weight(advantage: f64, beta: f64, clip: f64) -> f64 {
    (beta * advantage).exp().min(clip)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LowLevelStats {
    pub mean_value_loss: f64,
    pub mean_worker_weight: f64,
    pub mean_manager_weight: f64,
    pub updates: usize,
}

/// Expectile TD on `V^l` with reward `1[d(s', g) <= 1]`, then AWR for the
/// worker (dataset actions) and the manager (dataset midway states).
#[allow(clippy::too_many_arguments)]
pub fn train_low_value_and_actors(
    values: &mut HierValues,
    manager: &mut AwrTable,
    worker: &mut AwrTable,
    env: &EnvModel,
    dataset: &[OfflineEpisode],
    cfg: &OfflineConfig,
    updates: usize,
    rng: &mut Rng,
) -> Result<LowLevelStats> {
    check_dataset(dataset, 2)?;
    let mut stats = LowLevelStats {
        updates,
        ..LowLevelStats::default()
    };
    for _ in 0..updates {
        stats.mean_value_loss += low_td_step(values, env, dataset, cfg, rng)?;
    }
    for _ in 0..updates {
        let ep = pick_episode(dataset, 2, rng);
        let len = ep.actions.len();
        let t = rng.gen_range(0..len);
        let (s, a, s_next) = (ep.states[t], ep.actions[t], ep.states[t + 1]);
        let g = hindsight_goal(ep, t, rng);
        let w = awr_weight(
            values.low(s_next, g) - values.low(s, g),
            cfg.beta_awr,
            cfg.weight_clip,
        );
        worker.add(s, g, a, w);
        stats.mean_worker_weight += w;

        let gi = rng.gen_range(t + 1..ep.states.len());
        if gi >= t + 2 {
            let (sg, sw) = (ep.states[gi], ep.states[(t + gi) / 2]);
            let w = awr_weight(
                values.high_advantage(s, sw, sg),
                cfg.beta_awr,
                cfg.weight_clip,
            );
            manager.add(s, sg, sw.index(), w);
            stats.mean_manager_weight += w;
        }
    }
    let n = updates.max(1) as f64;
    stats.mean_value_loss /= n;
    stats.mean_worker_weight /= n;
    stats.mean_manager_weight /= n;
    Ok(stats)
}

/// Bounded set of landmark states.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoalBuffer {
    pub capacity: usize,
    pub landmarks: Vec<StateId>,
}

impl GoalBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            landmarks: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.landmarks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.landmarks.is_empty()
    }

    /// Landmark closest to `state` under `dist(state, landmark)`, ties to the
    /// earliest landmark.
    pub fn nearest(
        &self,
        state: StateId,
        dist: impl Fn(StateId, StateId) -> f64,
    ) -> Option<StateId> {
        let mut best: Option<(f64, StateId)> = None;
        for &l in &self.landmarks {
            let d = dist(state, l);
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, l));
            }
        }
        best.map(|(_, l)| l)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.landmarks).expect("state ids serialize")
    }

    pub fn from_json(text: &str, capacity: usize) -> Result<Self> {
        let landmarks: Vec<StateId> = serde_json::from_str(text)?;
        if landmarks.len() > capacity {
            return Err(Error::Config(format!(
                "{} landmarks exceed capacity {capacity}",
                landmarks.len()
            )));
        }
        Ok(Self {
            capacity,
            landmarks,
        })
    }
}

/// Farthest point sampling: repeatedly insert the candidate whose minimum
/// distance to the buffer is largest (ties to the lowest candidate index)
/// until the buffer is full or no new candidate remains. An empty buffer
/// takes the first candidate.
pub fn fps_update(
    buffer: &mut GoalBuffer,
    candidates: &[StateId],
    dist: impl Fn(StateId, StateId) -> f64,
) -> Result<()> {
    if candidates.is_empty() {
        return Err(Error::Empty("candidates"));
    }
    let mut fresh: Vec<StateId> = Vec::new();
    for &c in candidates {
        if !buffer.landmarks.contains(&c) && !fresh.contains(&c) {
            fresh.push(c);
        }
    }
    if buffer.landmarks.is_empty() && buffer.capacity > 0 {
        buffer.landmarks.push(fresh.remove(0));
    }
    let mut min_d: Vec<f64> = fresh
        .iter()
        .map(|&c| {
            buffer
                .landmarks
                .iter()
                .map(|&l| dist(c, l))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    while buffer.landmarks.len() < buffer.capacity && !fresh.is_empty() {
        let mut best = 0;
        for j in 1..fresh.len() {
            if min_d[j] > min_d[best] {
                best = j;
            }
        }
        let chosen = fresh.remove(best);
        min_d.remove(best);
        buffer.landmarks.push(chosen);
        for (c, d) in fresh.iter().zip(min_d.iter_mut()) {
            *d = d.min(dist(*c, chosen));
        }
    }
    Ok(())
}

/// Leftmost-branch decomposition with landmark snapping and the normalized
/// low-level value as the reachability test.
///
/// A proposal that is itself a landmark is kept. If the snapped subgoal is the
/// current start or goal, decomposition stops and the stack is returned
/// incomplete with the current goal as target.
///
/// When the manager has no entry for a task, the landmark maximizing
/// `min(V^h(s, l), V^h(l, g))` is proposed instead.
pub fn offline_plan(
    manager: &AwrTable,
    values: &HierValues,
    buffer: &GoalBuffer,
    task: Task,
    cfg: &OfflineConfig,
    max_depth: usize,
) -> Result<SubgoalStack> {
    if buffer.is_empty() {
        return Err(Error::Empty("goal buffer"));
    }
    let reachable = |g: StateId| values.normalized_low(task.init, g) > cfg.theta;
    let mut subgoals = vec![task.goal];
    let mut goal = task.goal;
    let mut calls = 0;
    loop {
        if goal == task.init || reachable(goal) {
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
        let proposal = match manager.greedy(task.init, goal) {
            Some(w) => StateId(w as u32),
            None => {
                let score = |l: StateId| values.high(task.init, l).min(values.high(l, goal));
                let mut best = buffer.landmarks[0];
                for &l in &buffer.landmarks[1..] {
                    if score(l) > score(best) {
                        best = l;
                    }
                }
                best
            }
        };
        let snapped = if buffer.landmarks.contains(&proposal) {
            proposal
        } else {
            buffer
                .nearest(proposal, |a, b| values.distance(a, b))
                .expect("buffer is non-empty")
        };
        if snapped == task.init || snapped == goal {
            // no progress: pursue the current goal without a reachability guarantee
            return Ok(SubgoalStack {
                subgoals,
                complete: false,
                policy_calls: calls + 1,
            });
        }
        goal = snapped;
        subgoals.push(goal);
        calls += 1;
    }
}

/// Everything learned offline.
#[derive(Clone, Debug)]
pub struct OfflineAgent {
    pub values: HierValues,
    pub manager: AwrTable,
    pub worker: AwrTable,
    pub buffer: GoalBuffer,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OfflineTrainConfig {
    pub high_updates: usize,
    pub low_updates: usize,
}

impl Default for OfflineTrainConfig {
    fn default() -> Self {
        Self {
            high_updates: 4_000_000,
            low_updates: 4_000_000,
        }
    }
}

/// Train values, actors and the goal buffer from a dataset.
pub fn train_offline(
    env: &EnvModel,
    dataset: &[OfflineEpisode],
    cfg: &OfflineConfig,
    train: &OfflineTrainConfig,
    rng: &mut Rng,
) -> Result<OfflineAgent> {
    cfg.validate()?;
    let n = env.state_count();
    let mut values = HierValues::new(n, cfg);
    let mut manager = AwrTable::new(n);
    let mut worker = AwrTable::new(env.action_count());
    train_low_value_only(&mut values, env, dataset, cfg, train.low_updates, rng)?;
    train_high_value(&mut values, dataset, cfg, train.high_updates, rng)?;
    values.sync_target();
    // the actors are fitted against settled values, continuing the low-level TD
    train_low_value_and_actors(
        &mut values,
        &mut manager,
        &mut worker,
        env,
        dataset,
        cfg,
        train.low_updates,
        rng,
    )?;
    // the buffer is built once, from the final low-level distances
    let mut buffer = GoalBuffer::new(cfg.buffer_capacity);
    let candidates = dataset_states(dataset);
    fps_update(&mut buffer, &candidates, |a, b| values.distance(a, b))?;
    Ok(OfflineAgent {
        values,
        manager,
        worker,
        buffer,
    })
}

fn train_low_value_only(
    values: &mut HierValues,
    env: &EnvModel,
    dataset: &[OfflineEpisode],
    cfg: &OfflineConfig,
    updates: usize,
    rng: &mut Rng,
) -> Result<()> {
    check_dataset(dataset, 2)?;
    for _ in 0..updates {
        low_td_step(values, env, dataset, cfg, rng)?;
    }
    Ok(())
}

/// One expectile TD update of `V^l` on a hindsight-relabelled transition;
/// returns the loss before the update.
fn low_td_step(
    values: &mut HierValues,
    env: &EnvModel,
    dataset: &[OfflineEpisode],
    cfg: &OfflineConfig,
    rng: &mut Rng,
) -> Result<f64> {
    let ep = pick_episode(dataset, 2, rng);
    let t = rng.gen_range(0..ep.actions.len());
    let (s, s_next) = (ep.states[t], ep.states[t + 1]);
    let g = hindsight_goal(ep, t, rng);
    let r = if env.reachable(s_next, g, 1)? {
        1.0
    } else {
        0.0
    };
    let i = values.idx(s, g);
    let u = r + cfg.gamma_l * values.low(s_next, g) - values.v_low[i];
    values.v_low[i] += cfg.value_learning_rate * expectile_grad(u, cfg.tau);
    let k = (t + cfg.k_subgoal).min(ep.states.len() - 1);
    let v = values.low(s, ep.states[k]);
    values.v_low_stats.push(v);
    Ok(expectile_loss(u, cfg.tau))
}

/// Distinct dataset states in order of first appearance.
pub fn dataset_states(dataset: &[OfflineEpisode]) -> Vec<StateId> {
    let mut seen = rustc_hash::FxHashSet::default();
    let mut out = Vec::new();
    for ep in dataset {
        for &s in &ep.states {
            if seen.insert(s) {
                out.push(s);
            }
        }
    }
    out
}

/// How an offline agent acts during evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OfflineController {
    /// Replan a subgoal stack every step; the worker pursues its target.
    Hierarchical,
    /// The worker pursues the final goal directly.
    Flat,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OfflineEpisodeResult {
    pub success: bool,
    pub steps: usize,
    pub optimal: u32,
}

/// Run one greedy episode with a step cap of `cap_factor` times the BFS
/// distance. Untrained worker keys fall back to a random action.
pub fn run_offline_episode(
    agent: &OfflineAgent,
    env: &EnvModel,
    task: Task,
    cfg: &OfflineConfig,
    controller: OfflineController,
    max_depth: usize,
    cap_factor: u32,
    rng: &mut Rng,
) -> Result<OfflineEpisodeResult> {
    let optimal = env
        .distance(task.init, task.goal)?
        .ok_or(Error::Unsolvable {
            from: task.init,
            to: task.goal,
        })?;
    let cap = (cap_factor * optimal) as usize;
    let mut s = task.init;
    let mut steps = 0;
    while s != task.goal && steps < cap {
        let target = match controller {
            OfflineController::Flat => task.goal,
            OfflineController::Hierarchical => offline_plan(
                &agent.manager,
                &agent.values,
                &agent.buffer,
                Task::new(s, task.goal),
                cfg,
                max_depth,
            )?
            .target(),
        };
        let a = match agent.worker.greedy(s, target) {
            Some(a) => a,
            None => rng.gen_range(0..env.action_count()),
        };
        s = env.step(s, a)?;
        steps += 1;
    }
    Ok(OfflineEpisodeResult {
        success: s == task.goal,
        steps,
        optimal,
    })
}
