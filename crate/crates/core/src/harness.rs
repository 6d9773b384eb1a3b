//! Experiment wiring: configuration, training loops, the evaluation protocol
//! and the ablation matrix.
//!
//! Online training alternates optional exploration episodes with batched
//! planner updates and evaluates periodically. LightsOut is scored by a
//! single greedy tree unroll that must be a valid plan; mazes are scored by
//! replanning a leftmost-branch subgoal stack every step and moving greedily
//! toward the reachable target. Offline mode trains the offline agent on a
//! generated dataset and compares it with the flat worker.

use std::path::PathBuf;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::envs::{EnvKind, EnvModel, MazeLayout, StateId, TaskConstraint};
use crate::error::{Error, Result};
use crate::explorer::{
    run_exploration, ExplorationEpisode, ExplorerConfig, ExplorerPolicy, GoalSource, TripletTable,
};
use crate::offline::{
    generate_dataset, run_offline_episode, train_offline, DatasetConfig, OfflineAgent,
    OfflineConfig, OfflineController, OfflineTrainConfig,
};
use crate::policy::{update_planner_with, AdvantageEstimator, PlannerPolicy, ValueTable};
use crate::returns::ReturnConfig;
use crate::tree::{
    node_depth, unroll_inference, unroll_marked_tree, SampleMode, Task, TreeTrajectory,
};
use crate::{rng_from_seed, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvSpec {
    LightsOut {
        side: usize,
    },
    /// `layout` overrides the built-in layout for `size`.
    Maze {
        size: usize,
        layout: Option<PathBuf>,
    },
}

impl EnvSpec {
    pub fn build(&self) -> Result<EnvModel> {
        match self {
            EnvSpec::LightsOut { side } => EnvModel::lightsout(*side),
            EnvSpec::Maze {
                layout: Some(path), ..
            } => EnvModel::maze(MazeLayout::load(path)?),
            EnvSpec::Maze {
                size: 5,
                layout: None,
            } => EnvModel::maze(MazeLayout::default_5x5()),
            EnvSpec::Maze {
                size: 7,
                layout: None,
            } => EnvModel::maze(MazeLayout::default_7x7()),
            EnvSpec::Maze { size, layout: None } => EnvModel::maze(MazeLayout::generate(
                *size,
                size.saturating_sub(1),
                *size as u64,
            )?),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Online,
    Offline,
    ExploreOnly,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardScheme {
    /// 1 at terminal nodes, 0 elsewhere.
    #[default]
    Default,
    /// -1 at non-terminal nodes, 0 at terminal nodes.
    NegRew,
    /// Minus the BFS distance of each node's task.
    DistSum,
    /// Default rewards with minimum-of-children GAE advantages.
    Gae,
}

/// Where online training tasks come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskSource {
    /// Uniformly random solvable tasks.
    #[default]
    Uniform,
    /// State pairs from the same exploration episode, collected with the
    /// given goal source during the exploration phase.
    Explored(GoalSource),
}

/// Evaluation task distribution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalTasks {
    /// Solvable tasks at BFS distance of at least 1.
    Solvable,
    /// Maze only: start in a 2x2 corner block, goal in the diagonally
    /// opposite block.
    Corner,
    MinDistance(u32),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    /// Tree depth during training.
    pub depth: usize,
    /// Maximum stack depth during inference.
    pub infer_depth: usize,
    pub returns: ReturnConfig,
    pub learning_rate: f64,
    pub entropy_coeff: f64,
    pub value_learning_rate: f64,
    pub batch_size: usize,
    /// Planner updates (online), explorer episodes (explore-only).
    pub updates: usize,
    /// Updates between evaluations; the final update is always evaluated.
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub eval_tasks: EvalTasks,
    pub seed: u64,
    pub mode: Mode,
    pub reward_scheme: RewardScheme,
    pub k_reach: u32,
    /// Maze episode cap as a multiple of the task's BFS distance.
    pub cap_factor: u32,
    pub task_source: TaskSource,
    pub explorer: ExplorerConfig,
    /// Fraction of the update budget during which exploration episodes run.
    pub explore_fraction: f64,
    pub offline: OfflineConfig,
    pub dataset: DatasetConfig,
    pub offline_train: OfflineTrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::maze(5)
    }
}

impl ExperimentConfig {
    fn base(env: EnvSpec, eval_tasks: EvalTasks) -> Self {
        Self {
            env,
            depth: 5,
            infer_depth: 8,
            returns: ReturnConfig::default(),
            learning_rate: 1.0,
            entropy_coeff: 0.05,
            value_learning_rate: 0.5,
            batch_size: 16,
            updates: 2000,
            eval_every: 500,
            eval_episodes: 100,
            eval_tasks,
            seed: 0,
            mode: Mode::Online,
            reward_scheme: RewardScheme::Default,
            k_reach: 1,
            cap_factor: 4,
            task_source: TaskSource::Uniform,
            explorer: ExplorerConfig::default(),
            explore_fraction: 0.3,
            offline: OfflineConfig::default(),
            dataset: DatasetConfig::default(),
            offline_train: OfflineTrainConfig::default(),
        }
    }

    pub fn lightsout(side: usize) -> Self {
        Self::base(EnvSpec::LightsOut { side }, EvalTasks::Solvable)
    }

    /// Maze planners use a gentler step and larger batch than LightsOut so the
    /// greedy policy stops flipping on rarely sampled task pairs.
    pub fn maze(size: usize) -> Self {
        Self {
            learning_rate: 0.5,
            batch_size: 32,
            updates: 3000,
            ..Self::base(EnvSpec::Maze { size, layout: None }, EvalTasks::Corner)
        }
    }

    /// Offline comparison on the 7x7 maze over tasks at distance 8 or more.
    pub fn offline_maze() -> Self {
        Self {
            mode: Mode::Offline,
            eval_tasks: EvalTasks::MinDistance(8),
            ..Self::maze(7)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.depth > self.infer_depth {
            return Err(Error::Config(format!(
                "training depth {} must lie in 1..=inference depth {}",
                self.depth, self.infer_depth
            )));
        }
        if self.batch_size == 0
            || self.eval_episodes == 0
            || self.eval_every == 0
            || self.cap_factor == 0
        {
            return Err(Error::Config(
                "batch size, eval episodes, eval cadence and cap must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.explore_fraction) {
            return Err(Error::Config("explore fraction must lie in [0, 1]".into()));
        }
        if self.learning_rate <= 0.0 || self.value_learning_rate < 0.0 || self.entropy_coeff < 0.0 {
            return Err(Error::Config(
                "learning rates must be positive and entropy non-negative".into(),
            ));
        }
        self.returns.validate()?;
        self.explorer.validate()?;
        self.offline.validate()?;
        if matches!(self.env, EnvSpec::LightsOut { .. })
            && (self.eval_tasks == EvalTasks::Corner || self.mode != Mode::Online)
        {
            return Err(Error::Config(
                "LightsOut supports online training with solvable or distance tasks".into(),
            ));
        }
        Ok(())
    }

    fn explores(&self) -> bool {
        self.mode == Mode::ExploreOnly || matches!(self.task_source, TaskSource::Explored(_))
    }

    /// Short description used in ablation tables.
    pub fn label(&self) -> String {
        format!(
            "{} scheme={} depth={} mode={}",
            match &self.env {
                EnvSpec::LightsOut { side } => format!("lightsout{side}"),
                EnvSpec::Maze { size, .. } => format!("maze{size}"),
            },
            serde_json::to_value(self.reward_scheme)
                .expect("enum serializes")
                .as_str()
                .unwrap_or("?"),
            self.depth,
            serde_json::to_value(self.mode)
                .expect("enum serializes")
                .as_str()
                .unwrap_or("?"),
        )
    }
}

/// One evaluation snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub success_rate: f64,
    /// Mean executed path length over successful episodes.
    pub avg_path_length: f64,
    /// Standard deviation of the executed path length over successes.
    pub path_length_std: f64,
    /// Mean executed path length over all episodes, failures counted at the
    /// step cap (maze and offline modes only).
    pub avg_path_length_all: Option<f64>,
    /// Mean of executed length / BFS distance over successes.
    pub optimality_ratio: f64,
    /// Mean root return of the training batches since the last record.
    pub mean_return: f64,
    /// Mean depth of the evaluation plans.
    pub mean_plan_depth: f64,
    /// Distinct triplets seen by the explorer so far.
    pub explorer_coverage: Option<usize>,
    /// Success rate of the flat baseline (offline mode).
    pub baseline_success_rate: Option<f64>,
    pub episodes: usize,
}

impl MetricsRecord {
    fn empty(step: usize) -> Self {
        Self {
            step,
            success_rate: 0.0,
            avg_path_length: 0.0,
            path_length_std: 0.0,
            avg_path_length_all: None,
            optimality_ratio: 0.0,
            mean_return: 0.0,
            mean_plan_depth: 0.0,
            explorer_coverage: None,
            baseline_success_rate: None,
            episodes: 0,
        }
    }
}

/// Outcome of one evaluation episode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub success: bool,
    pub path_length: usize,
    pub optimal: u32,
    pub plan_depth: usize,
}

fn summarize(step: usize, outcomes: &[EpisodeOutcome], executed: bool) -> MetricsRecord {
    let mut rec = MetricsRecord::empty(step);
    rec.episodes = outcomes.len();
    if outcomes.is_empty() {
        return rec;
    }
    let wins: Vec<&EpisodeOutcome> = outcomes.iter().filter(|o| o.success).collect();
    rec.success_rate = wins.len() as f64 / outcomes.len() as f64;
    if !wins.is_empty() {
        let n = wins.len() as f64;
        rec.avg_path_length = wins.iter().map(|o| o.path_length as f64).sum::<f64>() / n;
        rec.path_length_std = (wins
            .iter()
            .map(|o| (o.path_length as f64 - rec.avg_path_length).powi(2))
            .sum::<f64>()
            / n)
            .sqrt();
        rec.optimality_ratio = wins
            .iter()
            .map(|o| {
                if o.optimal == 0 {
                    1.0
                } else {
                    o.path_length as f64 / o.optimal as f64
                }
            })
            .sum::<f64>()
            / n;
    }
    if executed {
        rec.avg_path_length_all = Some(
            outcomes.iter().map(|o| o.path_length as f64).sum::<f64>() / outcomes.len() as f64,
        );
    }
    rec.mean_plan_depth =
        outcomes.iter().map(|o| o.plan_depth as f64).sum::<f64>() / outcomes.len() as f64;
    rec
}

const EVAL_TASK_SALT: u64 = 0x5EED_7A5C;
const EVAL_EPISODE_SALT: u64 = 0x0E7A_1E9D;

/// Independent RNG stream for evaluation episode `i`.
pub fn episode_rng(seed: u64, i: usize) -> Rng {
    rng_from_seed(seed ^ EVAL_EPISODE_SALT ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Rooms in the 2x2 block at corner `c` (0 top-left, 1 top-right,
/// 2 bottom-right, 3 bottom-left) of a `side x side` maze.
fn corner_block(side: usize, c: usize) -> [StateId; 4] {
    let (r0, c0) = match c {
        0 => (0, 0),
        1 => (0, side - 2),
        2 => (side - 2, side - 2),
        _ => (side - 2, 0),
    };
    let at = |r: usize, col: usize| StateId((r * side + col) as u32);
    [
        at(r0, c0),
        at(r0, c0 + 1),
        at(r0 + 1, c0),
        at(r0 + 1, c0 + 1),
    ]
}

/// Deterministic evaluation task list for a config.
pub fn eval_task_list(env: &EnvModel, cfg: &ExperimentConfig) -> Result<Vec<Task>> {
    let mut rng = rng_from_seed(cfg.seed ^ EVAL_TASK_SALT);
    (0..cfg.eval_episodes)
        .map(|_| match cfg.eval_tasks {
            EvalTasks::Solvable => {
                env.sample_task(&mut rng, TaskConstraint::Solvable { min_distance: 1 })
            }
            EvalTasks::MinDistance(d) => env.sample_task(&mut rng, TaskConstraint::MinDistance(d)),
            EvalTasks::Corner => {
                let side = env
                    .as_maze()
                    .ok_or_else(|| Error::Config("corner tasks need a maze".into()))?
                    .size();
                if side < 4 {
                    return Err(Error::Config(
                        "corner tasks need a maze of side 4 or more".into(),
                    ));
                }
                let c = rng.gen_range(0..4);
                let init = corner_block(side, c)[rng.gen_range(0..4)];
                let goal = corner_block(side, (c + 2) % 4)[rng.gen_range(0..4)];
                Ok(Task::new(init, goal))
            }
        })
        .collect()
}

fn bfs(env: &EnvModel, task: Task) -> Result<u32> {
    env.distance(task.init, task.goal)?
        .ok_or(Error::Unsolvable {
            from: task.init,
            to: task.goal,
        })
}

/// Single-attempt LightsOut scoring: one greedy tree of depth `depth` must be
/// a valid plan. The path length is the summed distance of the executed
/// segments.
pub fn eval_lightsout_episode(
    policy: &PlannerPolicy,
    env: &EnvModel,
    task: Task,
    depth: usize,
    k_reach: u32,
    rng: &mut Rng,
) -> Result<EpisodeOutcome> {
    let tree = unroll_marked_tree(policy, env, task, depth, k_reach, SampleMode::Greedy, rng)?;
    let frontier = tree.frontier();
    let mut path = 0;
    for &i in &frontier {
        path += bfs(env, tree.nodes[i])? as usize;
    }
    Ok(EpisodeOutcome {
        success: tree.is_valid_plan(),
        path_length: path,
        optimal: bfs(env, task)?,
        plan_depth: frontier.iter().map(|&i| node_depth(i)).max().unwrap_or(0),
    })
}

/// Maze execution: replan a greedy subgoal stack every step and take one
/// shortest-path step toward its target when the stack is complete. An
/// incomplete stack yields a uniformly random action.
pub fn eval_maze_episode(
    policy: &PlannerPolicy,
    env: &EnvModel,
    task: Task,
    infer_depth: usize,
    k_reach: u32,
    cap_factor: u32,
    rng: &mut Rng,
) -> Result<EpisodeOutcome> {
    let optimal = bfs(env, task)?;
    let cap = (cap_factor * optimal) as usize;
    let mut s = task.init;
    let mut steps = 0;
    let mut plan_depth = None;
    while s != task.goal && steps < cap {
        let stack = unroll_inference(
            policy,
            env,
            Task::new(s, task.goal),
            infer_depth,
            k_reach,
            SampleMode::Greedy,
            rng,
        )?;
        plan_depth.get_or_insert(stack.depth());
        let action = if stack.complete {
            env.next_action_toward(s, stack.target())?
        } else {
            None
        };
        let a = match action {
            Some(a) => a,
            None => rng.gen_range(0..env.action_count()),
        };
        s = env.step(s, a)?;
        steps += 1;
    }
    Ok(EpisodeOutcome {
        success: s == task.goal,
        path_length: steps,
        optimal,
        plan_depth: plan_depth.unwrap_or(0),
    })
}

/// Evaluate a planner on the config's task list without mutating it.
pub fn run_eval(
    policy: &PlannerPolicy,
    env: &EnvModel,
    cfg: &ExperimentConfig,
    step: usize,
) -> Result<MetricsRecord> {
    let tasks = eval_task_list(env, cfg)?;
    let lightsout = env.kind() == EnvKind::LightsOut;
    let outcomes = tasks
        .iter()
        .enumerate()
        .map(|(i, &task)| {
            let mut rng = episode_rng(cfg.seed, i);
            if lightsout {
                eval_lightsout_episode(policy, env, task, cfg.depth, cfg.k_reach, &mut rng)
            } else {
                eval_maze_episode(
                    policy,
                    env,
                    task,
                    cfg.infer_depth,
                    cfg.k_reach,
                    cfg.cap_factor,
                    &mut rng,
                )
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(step, &outcomes, !lightsout))
}

/// Overwrite rewards of a marked tree according to the scheme.
pub fn apply_reward_scheme(
    tree: &mut TreeTrajectory,
    env: &EnvModel,
    scheme: RewardScheme,
) -> Result<()> {
    match scheme {
        RewardScheme::Default | RewardScheme::Gae => {}
        RewardScheme::NegRew => {
            for i in 0..tree.len() {
                tree.rewards[i] = if tree.terminal[i] { 0.0 } else { -1.0 };
            }
        }
        RewardScheme::DistSum => {
            for i in 0..tree.len() {
                tree.rewards[i] = -(bfs(env, tree.nodes[i])? as f64);
            }
        }
    }
    Ok(())
}

/// Everything produced by a training run.
#[derive(Clone, Debug)]
pub struct TrainingOutcome {
    pub records: Vec<MetricsRecord>,
    pub policy: PlannerPolicy,
    pub values: ValueTable,
    pub explorer: Option<ExplorerPolicy>,
    pub exploration: Vec<ExplorationEpisode>,
    pub offline: Option<OfflineAgent>,
}

impl TrainingOutcome {
    pub fn last(&self) -> &MetricsRecord {
        self.records
            .last()
            .expect("every run emits at least one record")
    }
}

/// Pool of training tasks drawn from exploration episodes.
fn explored_task(pool: &[ExplorationEpisode], rng: &mut Rng) -> Option<Task> {
    if pool.is_empty() {
        return None;
    }
    for _ in 0..64 {
        let ep = &pool[rng.gen_range(0..pool.len())];
        let n = ep.coarse.len();
        if n < 2 {
            continue;
        }
        let i = rng.gen_range(0..n - 1);
        let j = rng.gen_range(i + 1..n);
        if ep.coarse[i] != ep.coarse[j] {
            return Some(Task::new(ep.coarse[i], ep.coarse[j]));
        }
    }
    None
}

/// Run a configured experiment, calling `emit` for every record as it is
/// produced.
pub fn run_training(
    cfg: &ExperimentConfig,
    mut emit: impl FnMut(&MetricsRecord),
) -> Result<TrainingOutcome> {
    cfg.validate()?;
    let env = cfg.env.build()?;
    match cfg.mode {
        Mode::Offline => run_offline(cfg, &env, emit),
        Mode::ExploreOnly | Mode::Online => {
            let mut rng = rng_from_seed(cfg.seed);
            let mut policy = PlannerPolicy::for_env(&env)
                .with_hyperparameters(cfg.learning_rate, cfg.entropy_coeff);
            let mut values = ValueTable::new(env.task_frame(), cfg.value_learning_rate);
            let mut explorer = cfg
                .explores()
                .then(|| ExplorerPolicy::new(&env, &cfg.explorer));
            let mut table = TripletTable::new();
            let mut pool = Vec::new();
            let mut records = Vec::new();
            let explore_updates = match cfg.mode {
                Mode::ExploreOnly => cfg.updates,
                _ => (cfg.explore_fraction * cfg.updates as f64).round() as usize,
            };
            let goal_source = match (cfg.mode, cfg.task_source) {
                (Mode::ExploreOnly, _) => GoalSource::Learned,
                (_, TaskSource::Explored(src)) => src,
                (_, TaskSource::Uniform) => GoalSource::Learned,
            };
            let estimator = match cfg.reward_scheme {
                RewardScheme::Gae => AdvantageEstimator::Gae,
                _ => AdvantageEstimator::LambdaReturn,
            };
            let (mut return_sum, mut return_count) = (0.0, 0usize);
            for step in 0..cfg.updates {
                if let Some(ex) = explorer.as_mut() {
                    if step < explore_updates {
                        let eps = run_exploration(
                            &env,
                            ex,
                            &mut table,
                            &cfg.explorer,
                            &cfg.returns,
                            1,
                            goal_source,
                            &mut rng,
                        )?;
                        pool.extend(eps);
                    }
                }
                if cfg.mode == Mode::Online {
                    let mut batch = Vec::with_capacity(cfg.batch_size);
                    for _ in 0..cfg.batch_size {
                        let task = match cfg.task_source {
                            TaskSource::Explored(_) => match explored_task(&pool, &mut rng) {
                                Some(t) => t,
                                None => env.sample_task(
                                    &mut rng,
                                    TaskConstraint::Solvable { min_distance: 1 },
                                )?,
                            },
                            TaskSource::Uniform => env.sample_task(
                                &mut rng,
                                TaskConstraint::Solvable { min_distance: 1 },
                            )?,
                        };
                        let mut tree = unroll_marked_tree(
                            &policy,
                            &env,
                            task,
                            cfg.depth,
                            cfg.k_reach,
                            SampleMode::Sample,
                            &mut rng,
                        )?;
                        apply_reward_scheme(&mut tree, &env, cfg.reward_scheme)?;
                        batch.push(tree);
                    }
                    update_planner_with(
                        &mut policy,
                        &mut values,
                        &mut batch,
                        &cfg.returns,
                        estimator,
                    )?;
                    for tree in &batch {
                        return_sum += tree.returns[0];
                        return_count += 1;
                    }
                }
                let last = step + 1 == cfg.updates;
                if (step + 1) % cfg.eval_every == 0 || last {
                    let mut rec = match cfg.mode {
                        Mode::Online => run_eval(&policy, &env, cfg, step + 1)?,
                        _ => MetricsRecord::empty(step + 1),
                    };
                    if return_count > 0 {
                        rec.mean_return = return_sum / return_count as f64;
                    }
                    (return_sum, return_count) = (0.0, 0);
                    if explorer.is_some() {
                        rec.explorer_coverage = Some(table.distinct());
                    }
                    emit(&rec);
                    records.push(rec);
                }
            }
            if records.is_empty() {
                let rec = match cfg.mode {
                    Mode::Online => run_eval(&policy, &env, cfg, 0)?,
                    _ => MetricsRecord::empty(0),
                };
                emit(&rec);
                records.push(rec);
            }
            Ok(TrainingOutcome {
                records,
                policy,
                values,
                explorer,
                exploration: pool,
                offline: None,
            })
        }
    }
}

fn run_offline(
    cfg: &ExperimentConfig,
    env: &EnvModel,
    mut emit: impl FnMut(&MetricsRecord),
) -> Result<TrainingOutcome> {
    if env.kind() != EnvKind::RoomMaze {
        return Err(Error::Config("offline mode needs a maze".into()));
    }
    let mut rng = rng_from_seed(cfg.seed);
    let dataset = generate_dataset(env, &cfg.dataset, &mut rng)?;
    let agent = train_offline(env, &dataset, &cfg.offline, &cfg.offline_train, &mut rng)?;
    let (hier, flat) = eval_offline(&agent, env, cfg)?;
    let mut rec = hier;
    rec.step = cfg.offline_train.high_updates + cfg.offline_train.low_updates;
    rec.baseline_success_rate = Some(flat.success_rate);
    emit(&rec);
    Ok(TrainingOutcome {
        records: vec![rec],
        policy: PlannerPolicy::for_env(env),
        values: ValueTable::for_env(env),
        explorer: None,
        exploration: Vec::new(),
        offline: Some(agent),
    })
}

/// Evaluate an offline agent hierarchically and flat on the same tasks.
pub fn eval_offline(
    agent: &OfflineAgent,
    env: &EnvModel,
    cfg: &ExperimentConfig,
) -> Result<(MetricsRecord, MetricsRecord)> {
    let tasks = eval_task_list(env, cfg)?;
    let mut records = Vec::new();
    for controller in [OfflineController::Hierarchical, OfflineController::Flat] {
        let outcomes = tasks
            .iter()
            .enumerate()
            .map(|(i, &task)| {
                let mut rng = episode_rng(cfg.seed, i);
                let r = run_offline_episode(
                    agent,
                    env,
                    task,
                    &cfg.offline,
                    controller,
                    cfg.infer_depth,
                    cfg.cap_factor,
                    &mut rng,
                )?;
                Ok(EpisodeOutcome {
                    success: r.success,
                    path_length: r.steps,
                    optimal: r.optimal,
                    plan_depth: 0,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        records.push(summarize(0, &outcomes, true));
    }
    let flat = records.pop().expect("two controllers");
    let hier = records.pop().expect("two controllers");
    Ok((hier, flat))
}

/// Aggregated results of one configuration over several seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub seeds: Vec<u64>,
    pub success: Vec<f64>,
    pub success_mean: f64,
    pub success_std: f64,
    pub path_mean: f64,
    pub path_std: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len().max(1) as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Distinct triplets covered by a trained, frozen explorer and by the
/// uniform-goal baseline over the same number of fresh episodes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub seed: u64,
    pub learned: usize,
    pub uniform: usize,
}

impl CoverageReport {
    pub fn ratio(&self) -> f64 {
        self.learned as f64 / self.uniform.max(1) as f64
    }
}

/// Train an explorer for `train_episodes`, then count the distinct triplets
/// it produces over `eval_episodes` with its policy frozen, against uniform
/// random goals over the same budget. Both counts start from empty tables.
pub fn coverage_comparison(
    cfg: &ExperimentConfig,
    train_episodes: usize,
    eval_episodes: usize,
) -> Result<CoverageReport> {
    cfg.validate()?;
    let env = cfg.env.build()?;
    let mut rng = rng_from_seed(cfg.seed);
    let mut policy = ExplorerPolicy::new(&env, &cfg.explorer);
    let mut table = TripletTable::new();
    run_exploration(
        &env,
        &mut policy,
        &mut table,
        &cfg.explorer,
        &cfg.returns,
        train_episodes,
        GoalSource::Learned,
        &mut rng,
    )?;
    let measure = |source: GoalSource| -> Result<usize> {
        let mut rng = rng_from_seed(cfg.seed ^ 0xC0FE);
        let mut table = TripletTable::new();
        let mut frozen = policy.clone();
        run_exploration(
            &env,
            &mut frozen,
            &mut table,
            &cfg.explorer,
            &cfg.returns,
            eval_episodes,
            source,
            &mut rng,
        )?;
        Ok(table.distinct())
    };
    Ok(CoverageReport {
        seed: cfg.seed,
        learned: measure(GoalSource::Frozen)?,
        uniform: measure(GoalSource::Uniform)?,
    })
}

/// Run every config over every seed and summarize the final records.
pub fn run_ablation(matrix: &[ExperimentConfig], seeds: &[u64]) -> Result<Vec<AblationRow>> {
    if seeds.len() < 3 {
        return Err(Error::Config("ablations need at least three seeds".into()));
    }
    let mut rows = Vec::with_capacity(matrix.len());
    for cfg in matrix {
        let mut success = Vec::with_capacity(seeds.len());
        let mut paths = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let run = ExperimentConfig {
                seed,
                ..cfg.clone()
            };
            let out = run_training(&run, |_| {})?;
            success.push(out.last().success_rate);
            paths.push(out.last().avg_path_length);
        }
        let (success_mean, success_std) = mean_std(&success);
        let (path_mean, path_std) = mean_std(&paths);
        rows.push(AblationRow {
            label: cfg.label(),
            seeds: seeds.to_vec(),
            success,
            success_mean,
            success_std,
            path_mean,
            path_std,
        });
    }
    Ok(rows)
}
