//! Memory-augmented exploration driven by triplet novelty.
//!
//! Every `K` low-level steps the explorer picks a goal state from its current
//! state and a short memory of earlier coarse states; a BFS-greedy walker then
//! moves toward that goal for `K` steps. The explorer is rewarded for coarse
//! triplets `(c[t-q], c[t-q/2], c[t])` it has rarely produced before.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng as _;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::envs::{EnvModel, StateId};
use crate::error::{Error, Result};
use crate::policy::{
    argmax, critic_loss, row_actor_gradient, row_actor_loss, sample_index, GradientReport,
    LogitTable,
};
use crate::returns::{linear_lambda_return, ReturnConfig};
use crate::tree::SampleMode;
use crate::Rng;

/// `(c[t-q], c[t-q/2], c[t], q)` with `q` in coarse steps.
pub type Triplet = (u32, u32, u32, u32);

/// Visit counts of coarse triplets.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TripletTable {
    counts: FxHashMap<Triplet, u32>,
}

impl TripletTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self, triplet: &Triplet) -> u32 {
        self.counts.get(triplet).copied().unwrap_or(0)
    }

    pub fn increment(&mut self, triplet: Triplet) {
        *self.counts.entry(triplet).or_insert(0) += 1;
    }

    /// Number of distinct triplets seen, all resolutions together.
    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    pub fn distinct_at(&self, q: usize) -> usize {
        self.counts.keys().filter(|t| t.3 as usize == q).count()
    }
}

/// Novelty reward for every coarse step, updating the counts as it goes.
///
/// `R_t = sum over q with t >= q of 1 / (1 + count(c[t-q], c[t-q/2], c[t], q))`,
/// where the count is read before the step's own triplets are added.
pub fn exploration_reward(
    table: &mut TripletTable,
    coarse: &[StateId],
    resolutions: &[usize],
) -> Vec<f64> {
    let mut rewards = vec![0.0; coarse.len()];
    for t in 0..coarse.len() {
        let mut fresh = Vec::new();
        for &q in resolutions {
            if q == 0 || t < q {
                continue;
            }
            let trip = (coarse[t - q].0, coarse[t - q / 2].0, coarse[t].0, q as u32);
            rewards[t] += 1.0 / (1.0 + table.count(&trip) as f64);
            fresh.push(trip);
        }
        for trip in fresh {
            table.increment(trip);
        }
    }
    rewards
}

/// Remembers every `K`-th visited state after the episode start.
///
/// `extract(t)` yields the states recorded at steps `t - K`, `t - 2K`,
/// `t - 4K`, ... (one slot per doubling up to `L_mem`), with
/// [`StateId::NULL`] where nothing was recorded.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MemoryBuffer {
    k: usize,
    l_mem: usize,
    /// `(step, state)` pairs, most recent last, at most `l_mem` of them.
    ring: Vec<(usize, StateId)>,
}

impl MemoryBuffer {
    pub fn new(k: usize, l_mem: usize) -> Result<Self> {
        if k == 0 || !l_mem.is_power_of_two() || l_mem < 2 {
            return Err(Error::Config(
                "memory needs K >= 1 and a power-of-two length of at least 2".into(),
            ));
        }
        Ok(Self {
            k,
            l_mem,
            ring: Vec::with_capacity(l_mem),
        })
    }

    /// Number of memory slots, `log2(L_mem)`.
    pub fn slots(&self) -> usize {
        self.l_mem.trailing_zeros() as usize
    }

    /// Offer the state visited at step `t`; kept only when `t` is a positive
    /// multiple of `K`.
    pub fn observe(&mut self, t: usize, state: StateId) {
        if t == 0 || t % self.k != 0 {
            return;
        }
        if self.ring.len() == self.l_mem {
            self.ring.remove(0);
        }
        self.ring.push((t, state));
    }

    pub fn extract(&self, t: usize) -> Vec<StateId> {
        (0..self.slots())
            .map(|j| {
                let back = (1usize << j) * self.k;
                t.checked_sub(back)
                    .and_then(|step| self.ring.iter().find(|(s, _)| *s == step))
                    .map_or(StateId::NULL, |&(_, state)| state)
            })
            .collect()
    }

    pub fn clear(&mut self) {
        self.ring.clear();
    }
}

/// Table key: current state followed by the memory slots.
pub type ExplorerKey = (u32, u32, u32, u32);

fn explorer_key(state: StateId, memory: &[StateId]) -> ExplorerKey {
    let slot = |j: usize| memory.get(j).copied().unwrap_or(StateId::NULL).0;
    (state.0, slot(0), slot(1), slot(2))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplorerConfig {
    /// Low-level steps per explorer decision.
    pub k: usize,
    /// Low-level steps per episode; a multiple of `k`.
    pub horizon: usize,
    pub l_mem: usize,
    /// Triplet resolutions in coarse steps.
    pub resolutions: [usize; 2],
    pub learning_rate: f64,
    pub entropy_coeff: f64,
    pub value_learning_rate: f64,
    /// Divide each update's advantages by their standard deviation when it
    /// exceeds 1.
    pub normalize_advantages: bool,
}

impl Default for ExplorerConfig {
    fn default() -> Self {
        Self {
            k: 1,
            horizon: 64,
            l_mem: 8,
            resolutions: [2, 4],
            learning_rate: 0.3,
            entropy_coeff: 0.01,
            value_learning_rate: 0.5,
            normalize_advantages: true,
        }
    }
}

impl ExplorerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.horizon == 0 || self.horizon % self.k != 0 {
            return Err(Error::Config(
                "explorer horizon must be a positive multiple of K".into(),
            ));
        }
        MemoryBuffer::new(self.k, self.l_mem)?;
        Ok(())
    }

    pub fn decisions_per_episode(&self) -> usize {
        self.horizon / self.k
    }
}

/// Softmax over goal states plus a critic, both keyed by state and memory.
#[derive(Clone, Debug)]
pub struct ExplorerPolicy {
    pub candidates: Vec<StateId>,
    pub learning_rate: f64,
    pub entropy_coeff: f64,
    pub value_learning_rate: f64,
    pub normalize_advantages: bool,
    logits: LogitTable<ExplorerKey>,
    values: FxHashMap<ExplorerKey, f64>,
    /// Running mean of observed returns; the value of keys never updated.
    default_value: f64,
    updates: u64,
}

impl ExplorerPolicy {
    pub fn new(env: &EnvModel, cfg: &ExplorerConfig) -> Self {
        let candidates: Vec<StateId> = env.states().collect();
        Self {
            logits: LogitTable::new(candidates.len()),
            candidates,
            learning_rate: cfg.learning_rate,
            entropy_coeff: cfg.entropy_coeff,
            value_learning_rate: cfg.value_learning_rate,
            normalize_advantages: cfg.normalize_advantages,
            values: FxHashMap::default(),
            default_value: 0.0,
            updates: 0,
        }
    }

    pub fn probabilities(&self, key: &ExplorerKey) -> Vec<f64> {
        self.logits.probabilities(key)
    }

    pub fn logits(&self, key: &ExplorerKey) -> Vec<f64> {
        self.logits.logits(key)
    }

    pub fn value(&self, key: &ExplorerKey) -> f64 {
        self.values.get(key).copied().unwrap_or(self.default_value)
    }

    pub fn choose(&self, key: &ExplorerKey, mode: SampleMode, rng: &mut Rng) -> usize {
        let probs = self.probabilities(key);
        match mode {
            SampleMode::Greedy => argmax(&probs),
            SampleMode::Sample => sample_index(&probs, rng),
        }
    }

    pub fn row_count(&self) -> usize {
        self.logits.len()
    }

    /// Actor loss `-sum (A log pi(z) + eta H)` over `(key, choice, advantage)`.
    pub fn actor_loss(&self, samples: &[(ExplorerKey, usize, f64)]) -> f64 {
        group(samples)
            .iter()
            .map(|(key, s)| row_actor_loss(&self.logits(key), s, self.entropy_coeff))
            .sum()
    }

    /// Gradient of [`ExplorerPolicy::actor_loss`] per touched row.
    pub fn actor_gradient(
        &self,
        samples: &[(ExplorerKey, usize, f64)],
    ) -> FxHashMap<ExplorerKey, Vec<f64>> {
        group(samples)
            .into_iter()
            .map(|(key, s)| {
                let g = row_actor_gradient(&self.logits(&key), &s, self.entropy_coeff);
                (key, g)
            })
            .collect()
    }

    /// Test hook: overwrite one logit row.
    pub fn set_logits(&mut self, key: ExplorerKey, logits: &[f64]) -> Result<()> {
        if logits.len() != self.candidates.len() {
            return Err(Error::LengthMismatch(logits.len(), self.candidates.len()));
        }
        self.logits.row_mut(key).copy_from_slice(logits);
        Ok(())
    }
}

fn group(samples: &[(ExplorerKey, usize, f64)]) -> Vec<(ExplorerKey, Vec<(usize, f64)>)> {
    let mut map: FxHashMap<ExplorerKey, Vec<(usize, f64)>> = FxHashMap::default();
    for &(key, z, a) in samples {
        map.entry(key).or_default().push((z, a));
    }
    let mut out: Vec<_> = map.into_iter().collect();
    out.sort_unstable_by_key(|(k, _)| *k);
    out
}

/// One episode at the decision scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplorerRollout {
    /// Key at every decision, plus the key after the last decision.
    pub keys: Vec<ExplorerKey>,
    /// Candidate index chosen at every decision.
    pub choices: Vec<usize>,
    /// Novelty collected by every decision.
    pub rewards: Vec<f64>,
}

/// REINFORCE with a learned baseline on linear lambda returns.
pub fn update_explorer(
    policy: &mut ExplorerPolicy,
    rollouts: &[ExplorerRollout],
    cfg: &ReturnConfig,
) -> Result<GradientReport> {
    if rollouts.is_empty() {
        return Err(Error::Empty("rollouts"));
    }
    let mut samples = Vec::new();
    let mut targets: FxHashMap<ExplorerKey, Vec<f64>> = FxHashMap::default();
    for r in rollouts {
        if r.keys.len() != r.choices.len() + 1 {
            return Err(Error::LengthMismatch(r.keys.len(), r.choices.len() + 1));
        }
        let next_values: Vec<f64> = r.keys[1..].iter().map(|k| policy.value(k)).collect();
        let g = linear_lambda_return(&r.rewards, &next_values, cfg)?;
        for (d, &choice) in r.choices.iter().enumerate() {
            let key = r.keys[d];
            samples.push((key, choice, g[d] - policy.value(&key)));
            targets.entry(key).or_default().push(g[d]);
        }
    }
    if policy.normalize_advantages && samples.len() > 1 {
        let n = samples.len() as f64;
        let mean = samples.iter().map(|s| s.2).sum::<f64>() / n;
        let var = samples.iter().map(|s| (s.2 - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt().max(1.0);
        for s in &mut samples {
            s.2 /= sd;
        }
    }
    let scale = 1.0 / rollouts.len() as f64;
    let mut report = GradientReport {
        nodes_used: samples.len(),
        mean_advantage: samples.iter().map(|s| s.2).sum::<f64>() / samples.len() as f64,
        ..GradientReport::default()
    };
    let (eta, lr) = (policy.entropy_coeff, policy.learning_rate);
    for (key, s) in group(&samples) {
        let (loss, h) = policy.logits.ascend(key, &s, eta, lr * scale);
        report.actor_loss += loss * scale;
        report.mean_entropy += h * s.len() as f64;
    }
    report.mean_entropy /= samples.len() as f64;
    let all: Vec<f64> = targets.values().flatten().copied().collect();
    for g in all {
        policy.updates += 1;
        policy.default_value += (g - policy.default_value) / policy.updates.min(1000) as f64;
    }
    let mut keys: Vec<_> = targets.into_iter().collect();
    keys.sort_unstable_by_key(|(k, _)| *k);
    for (key, t) in keys {
        let v = policy.value(&key);
        report.critic_loss += critic_loss(v, &t) * scale;
        let grad: f64 = t.iter().map(|x| v - x).sum();
        policy
            .values
            .insert(key, v - policy.value_learning_rate * scale * grad);
    }
    Ok(report)
}

/// How goals are picked during exploration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalSource {
    /// Sample from the explorer policy and train it after every episode.
    Learned,
    /// Sample from the explorer policy without updating it.
    Frozen,
    /// Uniformly random goal state (baseline).
    Uniform,
}

/// One logged episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplorationEpisode {
    /// Every low-level state, `horizon + 1` of them.
    pub states: Vec<StateId>,
    /// Every `K`-th state, starting with the first.
    pub coarse: Vec<StateId>,
    /// Novelty reward at every coarse step.
    pub rewards: Vec<f64>,
}

/// Run `episodes` exploration episodes from uniformly random starts.
///
/// The triplet table accumulates across episodes and calls, so coverage can be
/// measured on it afterwards.
#[allow(clippy::too_many_arguments)]
pub fn run_exploration(
    env: &EnvModel,
    policy: &mut ExplorerPolicy,
    table: &mut TripletTable,
    cfg: &ExplorerConfig,
    returns: &ReturnConfig,
    episodes: usize,
    source: GoalSource,
    rng: &mut Rng,
) -> Result<Vec<ExplorationEpisode>> {
    cfg.validate()?;
    let n = env.state_count() as u32;
    let mut memory = MemoryBuffer::new(cfg.k, cfg.l_mem)?;
    let mut out = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        memory.clear();
        let mut state = StateId(rng.gen_range(0..n));
        let mut states = vec![state];
        let mut coarse = vec![state];
        let mut keys = Vec::new();
        let mut choices = Vec::new();
        for d in 0..cfg.decisions_per_episode() {
            let t = d * cfg.k;
            let key = explorer_key(state, &memory.extract(t));
            let choice = match source {
                GoalSource::Uniform => rng.gen_range(0..policy.candidates.len()),
                _ => policy.choose(&key, SampleMode::Sample, rng),
            };
            let goal = policy.candidates[choice];
            for _ in 0..cfg.k {
                if let Some(a) = env.next_action_toward(state, goal)? {
                    state = env.step(state, a)?;
                }
                states.push(state);
            }
            memory.observe(t + cfg.k, state);
            coarse.push(state);
            keys.push(key);
            choices.push(choice);
        }
        keys.push(explorer_key(state, &memory.extract(cfg.horizon)));
        let rewards = exploration_reward(table, &coarse, &cfg.resolutions);
        if source == GoalSource::Learned {
            let rollout = ExplorerRollout {
                keys,
                choices,
                rewards: rewards[1..].to_vec(),
            };
            update_explorer(policy, std::slice::from_ref(&rollout), returns)?;
        }
        out.push(ExplorationEpisode {
            states,
            coarse,
            rewards,
        });
    }
    Ok(out)
}

pub fn write_dataset(path: impl AsRef<Path>, episodes: &[ExplorationEpisode]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for ep in episodes {
        serde_json::to_writer(&mut w, ep)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<ExplorationEpisode>> {
    let r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::MazeLayout;
    use crate::rng_from_seed;

    fn s(ids: &[u32]) -> Vec<StateId> {
        ids.iter().map(|&i| StateId(i)).collect()
    }

    #[test]
    fn fresh_triplets_earn_one_per_resolution() {
        let mut table = TripletTable::new();
        let r = exploration_reward(&mut table, &s(&[0, 1, 2, 3, 4]), &[2, 4]);
        assert_eq!(r[..2], [0.0, 0.0]);
        assert_eq!(r[2], 1.0);
        assert_eq!(r[4], 2.0);
        assert_eq!(table.distinct(), 4);
    }

    #[test]
    fn seen_triplet_decays() {
        let mut table = TripletTable::new();
        for _ in 0..3 {
            table.increment((0, 1, 2, 2));
        }
        let r = exploration_reward(&mut table, &s(&[0, 1, 2]), &[2, 4]);
        assert_eq!(r[2], 0.25);
        assert_eq!(table.count(&(0, 1, 2, 2)), 4);
    }

    #[test]
    fn repeats_within_a_trajectory_see_earlier_counts() {
        let mut table = TripletTable::new();
        let r = exploration_reward(&mut table, &s(&[5, 5, 5, 5]), &[2]);
        assert_eq!(r, vec![0.0, 0.0, 1.0, 0.5]);
    }

    #[test]
    fn memory_fill_order() {
        let k = 8;
        let mut mem = MemoryBuffer::new(k, 8).unwrap();
        assert_eq!(mem.slots(), 3);
        assert_eq!(mem.extract(0), vec![StateId::NULL; 3]);
        for t in 0..=4 * k {
            mem.observe(t, StateId(t as u32));
        }
        let m = mem.extract(4 * k);
        assert_eq!(m[0], StateId(3 * k as u32));
        assert_eq!(m[1], StateId(2 * k as u32));
        assert!(m[2].is_null());
        mem.observe(5 * k, StateId(5 * k as u32));
        let m = mem.extract(5 * k);
        assert_eq!(m, s(&[4 * k as u32, 3 * k as u32, k as u32]));
    }

    #[test]
    fn explorer_gradient_matches_finite_differences() {
        let env = EnvModel::lightsout(1).unwrap();
        let cfg = ExplorerConfig::default();
        let mut policy = ExplorerPolicy::new(&env, &cfg);
        let key = (0, 1, u32::MAX, u32::MAX);
        policy.set_logits(key, &[0.4, -0.9]).unwrap();
        let samples = [(key, 0, 0.7), (key, 1, -0.2), ((1, 0, 0, 0), 1, 1.5)];
        let grad = policy.actor_gradient(&samples);
        let h = 1e-6;
        for (k, g) in &grad {
            for j in 0..2 {
                let base = policy.logits(k);
                let mut up = base.clone();
                up[j] += h;
                let mut down = base.clone();
                down[j] -= h;
                let mut p_up = policy.clone();
                p_up.set_logits(*k, &up).unwrap();
                let mut p_down = policy.clone();
                p_down.set_logits(*k, &down).unwrap();
                let fd = (p_up.actor_loss(&samples) - p_down.actor_loss(&samples)) / (2.0 * h);
                assert!(
                    (fd - g[j]).abs() <= 1e-4 * g[j].abs().max(1e-6),
                    "fd {fd} vs {}",
                    g[j]
                );
            }
        }
    }

    #[test]
    fn update_rejects_empty_and_moves_toward_rewarded_choice() {
        let env = EnvModel::maze(MazeLayout::default_5x5()).unwrap();
        let cfg = ExplorerConfig {
            entropy_coeff: 0.0,
            ..ExplorerConfig::default()
        };
        let mut policy = ExplorerPolicy::new(&env, &cfg);
        let rc = ReturnConfig::default();
        assert!(update_explorer(&mut policy, &[], &rc).is_err());
        let key = (3, u32::MAX, u32::MAX, u32::MAX);
        let before = policy.probabilities(&key)[7];
        let rollout = ExplorerRollout {
            keys: vec![key, (4, 3, u32::MAX, u32::MAX)],
            choices: vec![7],
            rewards: vec![1.0],
        };
        update_explorer(&mut policy, &[rollout], &rc).unwrap();
        assert!(policy.probabilities(&key)[7] > before);
    }

    #[test]
    fn episode_shapes_and_determinism() {
        let env = EnvModel::maze(MazeLayout::default_5x5()).unwrap();
        let cfg = ExplorerConfig {
            k: 8,
            ..ExplorerConfig::default()
        };
        let rc = ReturnConfig::default();
        let run = |seed| {
            let mut policy = ExplorerPolicy::new(&env, &cfg);
            let mut table = TripletTable::new();
            let eps = run_exploration(
                &env,
                &mut policy,
                &mut table,
                &cfg,
                &rc,
                3,
                GoalSource::Learned,
                &mut rng_from_seed(seed),
            )
            .unwrap();
            (eps, table)
        };
        let (a, ta) = run(4);
        let (b, tb) = run(4);
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        assert_eq!(a[0].coarse.len(), 9);
        assert_eq!(a[0].states.len(), 65);
        for ep in &a {
            for (i, c) in ep.coarse.iter().enumerate() {
                assert_eq!(*c, ep.states[i * cfg.k]);
            }
        }
    }

    #[test]
    fn dataset_round_trip() {
        let ep = ExplorationEpisode {
            states: s(&[0, 1, 2]),
            coarse: s(&[0, 2]),
            rewards: vec![0.0, 0.0],
        };
        let dir = std::env::temp_dir().join(format!("dhp-explore-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("data.jsonl");
        write_dataset(&path, &[ep.clone(), ep.clone()]).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), vec![ep.clone(), ep]);
        std::fs::remove_dir_all(dir).unwrap();
    }
}
