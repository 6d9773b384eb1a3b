//! Command-line entry point: training, evaluation, ablations, oracle checks
//! and exploration runs.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dhp_core::explorer::{
    run_exploration, write_dataset, ExplorerPolicy, GoalSource, TripletTable,
};
use dhp_core::harness::{
    coverage_comparison, run_ablation, run_eval, run_training, EnvSpec, ExperimentConfig, Mode,
    RewardScheme, TaskSource,
};
use dhp_core::oracle::{
    balanced_tree_check, contraction_check, min_lemma_check, oracle_tree_return, random_tree,
    OracleKind,
};
use dhp_core::policy::{baseline_invariance_check, PlannerPolicy};
use dhp_core::returns::{tree_lambda_return, tree_mc_return, tree_one_step_return};
use dhp_core::{rng_from_seed, StateId, Task};

#[derive(Parser)]
#[command(
    name = "dhp",
    version,
    about = "Discrete hierarchical planning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a planner (or the offline agent, or only the explorer).
    Train(TrainArgs),
    /// Evaluate a saved planner checkpoint.
    Eval(EvalArgs),
    /// Run an ablation matrix over several seeds.
    Ablate(AblateArgs),
    /// Run the numerical verification suites; exits non-zero on any failure.
    OracleCheck(OracleArgs),
    /// Run the explorer and write its dataset.
    Explore(ExploreArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum EnvArg {
    Lightsout,
    Maze,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Default,
    NegRew,
    DistSum,
    Gae,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Online,
    Offline,
    ExploreOnly,
}

#[derive(Clone, Copy, ValueEnum)]
enum SourceArg {
    Uniform,
    Explorer,
    RandomGoals,
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long, value_enum, default_value = "maze")]
    env: EnvArg,
    /// LightsOut side L or maze side R.
    #[arg(long)]
    size: Option<usize>,
    /// Maze layout JSON overriding the built-in layout.
    #[arg(long)]
    layout: Option<PathBuf>,
    /// Training tree depth D.
    #[arg(long)]
    depth: Option<usize>,
    /// Inference depth D_I.
    #[arg(long)]
    infer_depth: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "default")]
    reward_scheme: SchemeArg,
    #[arg(long, value_enum, default_value = "online")]
    mode: ModeArg,
    /// Output directory (default: ./runs).
    #[arg(long, env = "DHP_OUT_DIR")]
    out: Option<PathBuf>,
    #[arg(long)]
    updates: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    entropy_coeff: Option<f64>,
    #[arg(long)]
    value_learning_rate: Option<f64>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    eval_episodes: Option<usize>,
    /// Source of online training tasks.
    #[arg(long, value_enum, default_value = "uniform")]
    task_source: SourceArg,
}

impl Common {
    fn config(&self) -> ExperimentConfig {
        let mut cfg = match (self.env, self.mode) {
            (EnvArg::Lightsout, _) => ExperimentConfig::lightsout(self.size.unwrap_or(2)),
            (EnvArg::Maze, ModeArg::Offline) => {
                let mut c = ExperimentConfig::offline_maze();
                if let Some(size) = self.size {
                    c.env = EnvSpec::Maze { size, layout: None };
                }
                c
            }
            (EnvArg::Maze, _) => ExperimentConfig::maze(self.size.unwrap_or(5)),
        };
        if let (Some(path), EnvSpec::Maze { layout, .. }) = (&self.layout, &mut cfg.env) {
            *layout = Some(path.clone());
        }
        cfg.seed = self.seed;
        cfg.mode = match self.mode {
            ModeArg::Online => Mode::Online,
            ModeArg::Offline => Mode::Offline,
            ModeArg::ExploreOnly => Mode::ExploreOnly,
        };
        cfg.reward_scheme = match self.reward_scheme {
            SchemeArg::Default => RewardScheme::Default,
            SchemeArg::NegRew => RewardScheme::NegRew,
            SchemeArg::DistSum => RewardScheme::DistSum,
            SchemeArg::Gae => RewardScheme::Gae,
        };
        cfg.task_source = match self.task_source {
            SourceArg::Uniform => TaskSource::Uniform,
            SourceArg::Explorer => TaskSource::Explored(GoalSource::Learned),
            SourceArg::RandomGoals => TaskSource::Explored(GoalSource::Uniform),
        };
        macro_rules! set {
            ($($field:ident).+ <- $value:expr) => {
                if let Some(v) = $value {
                    cfg.$($field).+ = v;
                }
            };
        }
        set!(depth <- self.depth);
        set!(infer_depth <- self.infer_depth);
        set!(returns.gamma <- self.gamma);
        set!(returns.lambda <- self.lambda);
        set!(updates <- self.updates);
        set!(batch_size <- self.batch_size);
        set!(learning_rate <- self.learning_rate);
        set!(entropy_coeff <- self.entropy_coeff);
        set!(value_learning_rate <- self.value_learning_rate);
        set!(eval_every <- self.eval_every);
        set!(eval_episodes <- self.eval_episodes);
        cfg
    }

    fn out_dir(&self) -> Result<PathBuf> {
        let dir = self.out.clone().unwrap_or_else(|| PathBuf::from("runs"));
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Planner checkpoint written by `train`.
    #[arg(long)]
    policy: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum AblationKind {
    /// default, neg_rew, dist_sum and gae reward schemes.
    Schemes,
    /// Training depths 1, 3 and 5 evaluated at the inference depth.
    Depth,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum, default_value = "schemes")]
    kind: AblationKind,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    #[arg(long, default_value_t = 1_000_000)]
    min_lemma_samples: usize,
    #[arg(long, default_value_t = 1000)]
    return_trees: usize,
    #[arg(long, default_value_t = 100_000)]
    baseline_samples: usize,
}

#[derive(Args)]
struct ExploreArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 3000)]
    episodes: usize,
    /// Use uniformly random goals instead of the learned explorer.
    #[arg(long)]
    uniform: bool,
    /// After training, compare frozen-explorer coverage with uniform goals
    /// over this many fresh episodes.
    #[arg(long)]
    compare: Option<usize>,
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)
        .with_context(|| format!("writing {}", path.display()))
}

fn train(args: TrainArgs) -> Result<()> {
    let cfg = args.common.config();
    let dir = args.common.out_dir()?;
    write_json(&dir.join("config.json"), &cfg)?;
    let mut sink = fs::File::create(dir.join("metrics.jsonl"))?;
    let mut write_err = None;
    let out = run_training(&cfg, |rec| {
        let line = serde_json::to_string(rec).expect("records serialize");
        println!("{line}");
        if let Err(e) = writeln!(sink, "{line}") {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    write_json(&dir.join("summary.json"), out.last())?;
    if cfg.mode == Mode::Online {
        out.policy.save(dir.join("policy.json"))?;
    }
    if let Some(agent) = &out.offline {
        fs::write(dir.join("buffer.json"), agent.buffer.to_json())?;
    }
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let cfg = args.common.config();
    cfg.validate()?;
    let env = cfg.env.build()?;
    let policy = PlannerPolicy::load(&args.policy)?;
    let rec = run_eval(&policy, &env, &cfg, 0)?;
    println!("{}", serde_json::to_string_pretty(&rec)?);
    Ok(())
}

fn ablate(args: AblateArgs) -> Result<()> {
    let base = args.common.config();
    let matrix: Vec<ExperimentConfig> = match args.kind {
        AblationKind::Schemes => [
            RewardScheme::Default,
            RewardScheme::NegRew,
            RewardScheme::DistSum,
            RewardScheme::Gae,
        ]
        .into_iter()
        .map(|reward_scheme| ExperimentConfig {
            reward_scheme,
            ..base.clone()
        })
        .collect(),
        AblationKind::Depth => [1, 3, 5]
            .into_iter()
            .map(|depth| ExperimentConfig {
                depth,
                ..base.clone()
            })
            .collect(),
    };
    let rows = run_ablation(&matrix, &args.seeds)?;
    for row in &rows {
        println!(
            "{:<40} success {:.3} ± {:.3}  path {:.2} ± {:.2}",
            row.label, row.success_mean, row.success_std, row.path_mean, row.path_std
        );
    }
    write_json(&args.common.out_dir()?.join("ablation.json"), &rows)?;
    Ok(())
}

/// Returns whether every suite passed.
fn oracle_check(args: OracleArgs) -> Result<bool> {
    let cfg = args.common.config();
    let returns = cfg.returns;
    let dir = args.common.out_dir()?;
    let mut rng = rng_from_seed(args.common.seed);
    let mut ok = true;
    let mut report = |name: &str, passed: bool, detail: String| {
        println!("{} {name}: {detail}", if passed { "PASS" } else { "FAIL" });
        ok &= passed;
    };

    let contraction = contraction_check(&returns, args.trials, &mut rng)?;
    report(
        "contraction",
        contraction.violations == 0,
        format!(
            "{} trials, max ratio T0 {:.4} (bound {:.4}), T-lambda {:.4} (bound {:.4})",
            contraction.trials,
            contraction.max_ratio_t0,
            contraction.bound_t0,
            contraction.max_ratio_tlambda,
            contraction.bound_tlambda
        ),
    );
    if let Some(json) = contraction.counterexample_json() {
        fs::write(dir.join("contraction_counterexample.json"), json)?;
    }

    let lemma = min_lemma_check(args.min_lemma_samples, &mut rng);
    report(
        "min-lemma",
        lemma.passed(),
        format!("{} samples, {} violations", lemma.samples, lemma.violations),
    );
    if let Some(cex) = &lemma.counterexample {
        write_json(&dir.join("min_lemma_counterexample.json"), cex)?;
    }

    let mut worst: f64 = 0.0;
    for i in 0..args.return_trees {
        let tree = random_tree(1 + i % 5, 0.3, &mut rng)?;
        let pairs = [
            (tree_mc_return(&tree, &returns), OracleKind::Mc),
            (
                tree_one_step_return(&tree, &tree.values, &returns),
                OracleKind::OneStep,
            ),
            (
                tree_lambda_return(&tree, &tree.values, &returns),
                OracleKind::Lambda,
            ),
        ];
        for (module, kind) in pairs {
            let oracle = oracle_tree_return(&tree, &tree.values, &returns, kind);
            for (a, b) in module.iter().zip(&oracle) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    report(
        "return-oracle",
        worst < 1e-12,
        format!("{} trees, max |diff| {worst:.2e}", args.return_trees),
    );

    for leaves in [4, 8] {
        let b = balanced_tree_check(leaves, |t| tree_mc_return(t, &returns)[0])?;
        report(
            &format!("balanced-tree-{leaves}"),
            b.passed(),
            format!(
                "{} shapes, balanced {:.6}, best {:.6}",
                b.shapes, b.balanced_return, b.best_return
            ),
        );
    }

    let mut policy =
        PlannerPolicy::new(vec![StateId(0), StateId(1), StateId(2)], Default::default())?;
    let task = Task::new(StateId(0), StateId(2));
    policy.set_logits(&task, &[0.3, -0.2, 0.5])?;
    let stat = baseline_invariance_check(&policy, &task, 1.7, args.baseline_samples, &mut rng)?;
    report(
        "baseline",
        stat.within(3.0),
        format!(
            "{} samples, |mean grad| {:.2e}, 3 SE {:.2e}",
            stat.samples,
            stat.norm,
            3.0 * stat.standard_error_norm
        ),
    );
    Ok(ok)
}

fn explore(args: ExploreArgs) -> Result<()> {
    let cfg = args.common.config();
    if let Some(eval_episodes) = args.compare {
        let report = coverage_comparison(&cfg, args.episodes, eval_episodes)?;
        println!("{}", serde_json::to_string(&report)?);
        return Ok(());
    }
    cfg.validate()?;
    let env = cfg.env.build()?;
    let mut rng = rng_from_seed(cfg.seed);
    let mut policy = ExplorerPolicy::new(&env, &cfg.explorer);
    let mut table = TripletTable::new();
    let source = if args.uniform {
        GoalSource::Uniform
    } else {
        GoalSource::Learned
    };
    let episodes = run_exploration(
        &env,
        &mut policy,
        &mut table,
        &cfg.explorer,
        &cfg.returns,
        args.episodes,
        source,
        &mut rng,
    )?;
    let dir = args.common.out_dir()?;
    write_dataset(dir.join("exploration.jsonl"), &episodes)?;
    println!(
        "{{\"episodes\":{},\"distinct_triplets\":{}}}",
        episodes.len(),
        table.distinct()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a).map(|_| true),
        Command::Eval(a) => eval(a).map(|_| true),
        Command::Ablate(a) => ablate(a).map(|_| true),
        Command::OracleCheck(a) => oracle_check(a),
        Command::Explore(a) => explore(a).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
