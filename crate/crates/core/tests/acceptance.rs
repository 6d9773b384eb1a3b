//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use dhp_core::explorer::GoalSource;
use dhp_core::harness::{
    coverage_comparison, run_training, ExperimentConfig, RewardScheme, TaskSource, TrainingOutcome,
};
use dhp_core::offline::{
    expectile_grad, expectile_loss, fps_update, GoalBuffer, HierValues, OfflineConfig,
};
use dhp_core::oracle::{
    balanced_tree_check, contraction_check, min_lemma_check, oracle_tree_return, random_tree,
    OracleKind,
};
use dhp_core::policy::{baseline_invariance_check, PlannerPolicy};
use dhp_core::returns::{
    tree_bootstrapped_return, tree_lambda_return, tree_mc_return, tree_one_step_return,
};
use dhp_core::{rng_from_seed, Result, ReturnConfig, StateId, Task};
use rand::Rng as _;

const SEEDS: [u64; 3] = [0, 1, 2];

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { passed, detail })
}

fn train(cfg: &ExperimentConfig) -> Result<TrainingOutcome> {
    run_training(cfg, |_| {})
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn lightsout_two() -> Result<Outcome> {
    let start = Instant::now();
    let out = train(&ExperimentConfig::lightsout(2))?;
    let r = out.last();
    let elapsed = start.elapsed();
    outcome(
        r.success_rate == 1.0
            && (2.0..=3.0).contains(&r.avg_path_length)
            && elapsed < Duration::from_secs(300),
        format!(
            "success {:.2}, path {:.2} ± {:.2}, {:.1}s",
            r.success_rate,
            r.avg_path_length,
            r.path_length_std,
            elapsed.as_secs_f64()
        ),
    )
}

fn lightsout_three() -> Result<Outcome> {
    let start = Instant::now();
    let cfg = ExperimentConfig {
        updates: 3000,
        eval_every: 3000,
        ..ExperimentConfig::lightsout(3)
    };
    let out = train(&cfg)?;
    let r = out.last();
    let elapsed = start.elapsed();
    outcome(
        r.success_rate >= 0.8 && r.avg_path_length <= 5.0 && elapsed < Duration::from_secs(1800),
        format!(
            "success {:.2}, path {:.2} ± {:.2}, {:.1}s",
            r.success_rate,
            r.avg_path_length,
            r.path_length_std,
            elapsed.as_secs_f64()
        ),
    )
}

fn maze_corners() -> Result<Outcome> {
    let out = train(&ExperimentConfig::maze(5))?;
    let r = out.last();
    outcome(
        r.success_rate == 1.0 && r.optimality_ratio <= 1.3,
        format!(
            "{} corner tasks, success {:.2}, path {:.2}, executed/BFS {:.3}",
            r.episodes, r.success_rate, r.avg_path_length, r.optimality_ratio
        ),
    )
}

fn depth_generalization() -> Result<Outcome> {
    let mut per_depth = Vec::new();
    for depth in [1, 3, 5] {
        let mut success = Vec::new();
        for seed in SEEDS {
            let cfg = ExperimentConfig {
                depth,
                seed,
                updates: 4000,
                eval_every: 4000,
                ..ExperimentConfig::maze(5)
            };
            success.push(train(&cfg)?.last().success_rate);
        }
        per_depth.push((depth, success));
    }
    let reference = mean(&per_depth[2].1);
    let passed = per_depth
        .iter()
        .all(|(_, s)| (mean(s) - reference).abs() <= 0.05);
    let detail = per_depth
        .iter()
        .map(|(d, s)| format!("D={d} {:.3} {:?}", mean(s), s))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(passed, format!("inference depth 8: {detail}"))
}

fn contraction() -> Result<Outcome> {
    let start = Instant::now();
    let report = contraction_check(&ReturnConfig::default(), 10_000, &mut rng_from_seed(11))?;
    let elapsed = start.elapsed();
    outcome(
        report.passed() && elapsed < Duration::from_secs(60),
        format!(
            "{} trials, {} violations, max T0 ratio {:.4} (bound {:.4}), max T-lambda ratio {:.4} (bound {:.4}), {:.2}s",
            report.trials,
            report.violations,
            report.max_ratio_t0,
            report.bound_t0,
            report.max_ratio_tlambda,
            report.bound_tlambda,
            elapsed.as_secs_f64()
        ),
    )
}

fn min_lemma() -> Result<Outcome> {
    let start = Instant::now();
    let report = min_lemma_check(1_000_000, &mut rng_from_seed(12));
    let elapsed = start.elapsed();
    outcome(
        report.passed() && elapsed < Duration::from_secs(10),
        format!(
            "{} quadruples, {} violations, {:.2}s",
            report.samples,
            report.violations,
            elapsed.as_secs_f64()
        ),
    )
}

fn baseline() -> Result<Outcome> {
    let mut rng = rng_from_seed(13);
    let mut policy =
        PlannerPolicy::new(vec![StateId(0), StateId(1), StateId(2)], Default::default())?;
    let mut details = Vec::new();
    let mut passed = true;
    // b = 1 at one task, then random per-task baselines at three more
    let mut cases = vec![(Task::new(StateId(0), StateId(2)), 1.0)];
    for k in 0..3u32 {
        cases.push((
            Task::new(StateId(k), StateId((k + 1) % 3)),
            rng.gen_range(-5.0..5.0),
        ));
    }
    for (task, b) in cases {
        let logits: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        policy.set_logits(&task, &logits)?;
        let stat = baseline_invariance_check(&policy, &task, b, 100_000, &mut rng)?;
        passed &= stat.within(3.0);
        details.push(format!(
            "b={b:.2}: |g| {:.2e} < 3SE {:.2e}",
            stat.norm,
            3.0 * stat.standard_error_norm
        ));
    }
    outcome(
        passed,
        format!("100000 samples each; {}", details.join("; ")),
    )
}

fn return_oracle() -> Result<Outcome> {
    let cfg = ReturnConfig::default();
    let mut rng = rng_from_seed(14);
    let mut worst: f64 = 0.0;
    let mut reductions_exact = true;
    for i in 0..1000 {
        let tree = random_tree(1 + i % 5, 0.3, &mut rng)?;
        let v = &tree.values;
        let pairs = [
            (tree_mc_return(&tree, &cfg), OracleKind::Mc),
            (tree_one_step_return(&tree, v, &cfg), OracleKind::OneStep),
            (tree_lambda_return(&tree, v, &cfg), OracleKind::Lambda),
        ];
        for (module, kind) in pairs {
            let oracle = oracle_tree_return(&tree, v, &cfg, kind);
            for (a, b) in module.iter().zip(&oracle) {
                worst = worst.max((a - b).abs());
            }
        }
        let at = |lambda: f64| tree_lambda_return(&tree, v, &ReturnConfig { lambda, ..cfg });
        reductions_exact &= at(0.0) == tree_one_step_return(&tree, v, &cfg);
        reductions_exact &= at(1.0) == tree_bootstrapped_return(&tree, v, &cfg);
    }
    outcome(
        worst < 1e-12 && reductions_exact,
        format!("1000 trees (D 1..5), max |diff| {worst:.2e}, lambda 0/1 reductions exact: {reductions_exact}"),
    )
}

fn balanced_trees() -> Result<Outcome> {
    let cfg = ReturnConfig::default();
    let mut passed = true;
    let mut details = Vec::new();
    for leaves in [4, 8] {
        let r = balanced_tree_check(leaves, |t| tree_mc_return(t, &cfg)[0])?;
        passed &= r.passed();
        details.push(format!(
            "{leaves} leaves: {} shapes, {} counterexamples, balanced {:.6}",
            r.shapes, r.counterexamples, r.balanced_return
        ));
    }
    outcome(passed, details.join("; "))
}

fn explorer_value() -> Result<Outcome> {
    let mut passed = true;
    let mut coverage = Vec::new();
    let (mut learned, mut random) = (Vec::new(), Vec::new());
    for seed in SEEDS {
        let base = ExperimentConfig {
            seed,
            ..ExperimentConfig::maze(5)
        };
        let c = coverage_comparison(&base, 3000, 100)?;
        passed &= c.ratio() >= 1.2;
        coverage.push(format!("{}/{} = {:.2}", c.learned, c.uniform, c.ratio()));
        for (source, into) in [
            (GoalSource::Learned, &mut learned),
            (GoalSource::Uniform, &mut random),
        ] {
            let cfg = ExperimentConfig {
                task_source: TaskSource::Explored(source),
                ..base.clone()
            };
            into.push(train(&cfg)?.last().success_rate);
        }
    }
    passed &= mean(&learned) >= mean(&random);
    outcome(
        passed,
        format!(
            "triplets per 100 episodes (explorer/uniform) {}; planner success explorer-data {:?} vs random-goal-data {:?}",
            coverage.join(", "),
            learned,
            random
        ),
    )
}

fn offline_variant() -> Result<Outcome> {
    let mut passed = true;
    let mut runs = Vec::new();
    for seed in SEEDS {
        let cfg = ExperimentConfig {
            seed,
            ..ExperimentConfig::offline_maze()
        };
        let r = train(&cfg)?.last().clone();
        let flat = r
            .baseline_success_rate
            .expect("offline runs report the flat baseline");
        passed &= r.success_rate >= flat + 0.10;
        runs.push(format!("{:.2} vs {:.2}", r.success_rate, flat));
    }

    let mut rng = rng_from_seed(15);
    let mut worst_fd: f64 = 0.0;
    for _ in 0..1000 {
        let tau = rng.gen_range(0.05..0.95);
        let u = rng.gen_range(0.01..5.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let h = 1e-6;
        let fd = (expectile_loss(u + h, tau) - expectile_loss(u - h, tau)) / (2.0 * h);
        let g = expectile_grad(u, tau);
        worst_fd = worst_fd.max((fd - g).abs() / g.abs());
    }
    passed &= worst_fd < 1e-5;

    // 1-D chain 0..8 with V^l = -BFS distance, capacity 3, seeded with {0}
    let cfg = OfflineConfig::default();
    let mut values = HierValues::new(9, &cfg);
    for a in 0..9u32 {
        for b in 0..9u32 {
            values.set_low(StateId(a), StateId(b), -(a.abs_diff(b) as f64));
        }
    }
    let mut buffer = GoalBuffer::new(3);
    buffer.landmarks.push(StateId(0));
    let chain: Vec<StateId> = (0..9).map(StateId).collect();
    fps_update(&mut buffer, &chain, |a, b| values.distance(a, b))?;
    let mut best = (f64::NEG_INFINITY, 0, 0);
    for x in 1..9u32 {
        for y in x + 1..9u32 {
            let spread = [x, y, y - x].into_iter().min().unwrap_or(0) as f64;
            if spread > best.0 {
                best = (spread, x, y);
            }
        }
    }
    let fps_ok =
        buffer.landmarks == vec![StateId(0), StateId(8), StateId(4)] && (best.1, best.2) == (4, 8);
    passed &= fps_ok;
    outcome(
        passed,
        format!(
            "DHP vs flat AWR on BFS>=8 tasks {}; expectile FD max rel err {worst_fd:.1e}; FPS chain picks {:?}",
            runs.join(", "),
            buffer.landmarks.iter().map(|s| s.0).collect::<Vec<_>>()
        ),
    )
}

fn ablation_direction() -> Result<Outcome> {
    let mut by_scheme = Vec::new();
    for scheme in [
        RewardScheme::Default,
        RewardScheme::NegRew,
        RewardScheme::DistSum,
    ] {
        let mut success = Vec::new();
        for seed in SEEDS {
            let cfg = ExperimentConfig {
                reward_scheme: scheme,
                seed,
                updates: 1000,
                eval_every: 1000,
                ..ExperimentConfig::lightsout(3)
            };
            success.push(train(&cfg)?.last().success_rate);
        }
        by_scheme.push(success);
    }
    let (default, neg, dist) = (
        mean(&by_scheme[0]),
        mean(&by_scheme[1]),
        mean(&by_scheme[2]),
    );
    outcome(
        (neg - default).abs() <= 0.05 && dist < default,
        format!(
            "L=3, 1000 updates: default {default:.3} {:?}, neg_rew {neg:.3} {:?}, dist_sum {dist:.3} {:?}",
            by_scheme[0], by_scheme[1], by_scheme[2]
        ),
    )
}

type Criterion = (&'static str, fn() -> Result<Outcome>);

fn main() -> ExitCode {
    let criteria: [Criterion; 12] = [
        ("lightsout-2", lightsout_two),
        ("lightsout-3", lightsout_three),
        ("maze-5x5-corners", maze_corners),
        ("depth-generalization", depth_generalization),
        ("contraction", contraction),
        ("min-lemma", min_lemma),
        ("baseline", baseline),
        ("return-oracle", return_oracle),
        ("balanced-tree", balanced_trees),
        ("explorer-value", explorer_value),
        ("offline-variant", offline_variant),
        ("ablation-direction", ablation_direction),
    ];
    let mut failures = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let (passed, detail) = match run() {
            Ok(o) => (o.passed, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failures += usize::from(!passed);
        println!(
            "{} {name}: {detail} [{:.1}s]",
            if passed { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failures,
        criteria.len()
    );
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
