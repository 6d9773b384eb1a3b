//! Property-based checks of the invariants each module promises.

use dhp_core::envs::{EnvModel, MazeLayout, TaskConstraint};
use dhp_core::explorer::{
    exploration_reward, run_exploration, ExplorerConfig, ExplorerPolicy, GoalSource, MemoryBuffer,
    TripletTable,
};
use dhp_core::harness::{eval_lightsout_episode, run_training, ExperimentConfig, Mode};
use dhp_core::offline::{
    expectile_grad, expectile_loss, fps_update, GoalBuffer, HierValues, OfflineConfig,
};
use dhp_core::oracle::{random_tree, random_tree_mdp};
use dhp_core::policy::{entropy, softmax, update_planner, LogitTable, PlannerPolicy, ValueTable};
use dhp_core::returns::{
    bellman_operator, sup_distance, tree_bootstrapped_return, tree_lambda_return, tree_mc_return,
    tree_one_step_return, OperatorKind,
};
use dhp_core::tree::{
    children, internal_count, mark_terminal, node_count, parent, unroll_inference,
    unroll_marked_tree, unroll_training_tree, SampleMode,
};
use dhp_core::{rng_from_seed, ReturnConfig, StateId, SubgoalChoice, Task, TreeTrajectory};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng as _;

fn maze5() -> EnvModel {
    EnvModel::maze(MazeLayout::default_5x5()).unwrap()
}

fn random_logit_policy(env: &EnvModel, seed: u64) -> PlannerPolicy {
    let mut rng = rng_from_seed(seed);
    let mut policy = PlannerPolicy::for_env(env);
    for _ in 0..32 {
        let task = env.sample_task(&mut rng, TaskConstraint::Any).unwrap();
        let logits: Vec<f64> = (0..policy.candidate_count())
            .map(|_| rng.gen_range(-3.0..3.0))
            .collect();
        policy.set_logits(&task, &logits).unwrap();
    }
    policy
}

fn check_tree_invariants(tree: &TreeTrajectory) {
    for i in 0..tree.len() {
        assert_eq!(tree.rewards[i] == 1.0, tree.terminal[i]);
        assert!(tree.rewards[i] == 0.0 || tree.rewards[i] == 1.0);
        if tree.is_internal(i) {
            let (l, r) = children(i);
            if tree.terminal[i] {
                assert!(
                    tree.terminal[l] && tree.terminal[r],
                    "terminal flags must be inherited"
                );
            } else {
                assert_eq!(tree.nodes[l].init, tree.nodes[i].init);
                assert_eq!(tree.nodes[l].goal, tree.nodes[r].init);
                assert_eq!(tree.nodes[r].goal, tree.nodes[i].goal);
            }
        }
    }
}

/// `G_d = (1 - T_d) (R_{d+1} + gamma ((1 - lambda) v_{d+1} + lambda G_{d+1}))`
/// along a single chain, bootstrapping on the last value when it is live.
fn chain_lambda_return(terminal: &[bool], values: &[f64], cfg: &ReturnConfig) -> Vec<f64> {
    let n = terminal.len();
    let mut g = vec![0.0; n];
    g[n - 1] = if terminal[n - 1] { 0.0 } else { values[n - 1] };
    for d in (0..n - 1).rev() {
        if terminal[d] {
            continue;
        }
        let r = if terminal[d + 1] { 1.0 } else { 0.0 };
        let v = if terminal[d + 1] { 0.0 } else { values[d + 1] };
        g[d] = r + cfg.gamma * ((1.0 - cfg.lambda) * v + cfg.lambda * g[d + 1]);
    }
    g
}

/// Scalar expectile of a discrete distribution by bisection on the
/// first-order condition `tau E[(x - c)+] = (1 - tau) E[(c - x)+]`.
fn expectile_by_bisection(xs: &[f64], tau: f64) -> f64 {
    let excess = |c: f64| {
        xs.iter()
            .map(|&x| {
                if x >= c {
                    tau * (x - c)
                } else {
                    -(1.0 - tau) * (c - x)
                }
            })
            .sum::<f64>()
    };
    let (mut lo, mut hi) = (
        xs.iter().copied().fold(f64::INFINITY, f64::min),
        xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    );
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if excess(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // ---------------------------------------------------------------- tree

    #[test]
    fn level_indexing_is_consistent(i in 1usize..4095) {
        let p = parent(i).unwrap();
        prop_assert_eq!(p, (i - 1) / 2);
        let (l, r) = children(p);
        prop_assert!(l == i || r == i);
        prop_assert_eq!(r, l + 1);
    }

    #[test]
    fn marked_trees_keep_their_invariants(seed in any::<u64>(), depth in 1usize..6, maze in any::<bool>()) {
        let env = if maze { maze5() } else { EnvModel::lightsout(3).unwrap() };
        let policy = random_logit_policy(&env, seed);
        let mut rng = rng_from_seed(seed);
        let task = env.sample_task(&mut rng, TaskConstraint::Any).unwrap();
        let tree = unroll_marked_tree(&policy, &env, task, depth, 1, SampleMode::Sample, &mut rng).unwrap();
        prop_assert_eq!(tree.len(), node_count(depth));
        prop_assert_eq!(tree.actions.len(), internal_count(depth));
        check_tree_invariants(&tree);

        let mut full = unroll_training_tree(&policy, task, depth, &mut rng).unwrap();
        mark_terminal(&mut full, &env, 1).unwrap();
        for i in 1..full.len() {
            if full.terminal[parent(i).unwrap()] {
                prop_assert!(full.terminal[i]);
            }
        }
    }

    #[test]
    fn complete_stacks_of_a_midpoint_planner_reach_the_goal(init in 0u32..25, goal in 0u32..25) {
        let env = maze5();
        let mut policy = PlannerPolicy::for_env(&env);
        for s in env.states() {
            for g in env.states() {
                let d = env.distance(s, g).unwrap().unwrap();
                let mut logits = vec![0.0; policy.candidate_count()];
                let mid = env
                    .states()
                    .find(|&w| {
                        let a = env.distance(s, w).unwrap().unwrap();
                        let b = env.distance(w, g).unwrap().unwrap();
                        a + b == d && a == d.div_ceil(2)
                    })
                    .unwrap();
                logits[mid.index()] = 5.0;
                policy.set_logits(&Task::new(s, g), &logits).unwrap();
            }
        }
        let mut rng = rng_from_seed(0);
        let (mut s, goal) = (StateId(init), StateId(goal));
        let mut steps = 0;
        while s != goal {
            let stack = unroll_inference(&policy, &env, Task::new(s, goal), 8, 1, SampleMode::Greedy, &mut rng).unwrap();
            prop_assert!(stack.complete);
            prop_assert!(env.reachable(s, stack.target(), 1).unwrap());
            if let Some(a) = env.next_action_toward(s, stack.target()).unwrap() {
                s = env.step(s, a).unwrap();
            }
            steps += 1;
            prop_assert!(steps <= 25);
        }
        prop_assert_eq!(steps, env.distance(StateId(init), goal).unwrap().unwrap());
    }

    // ------------------------------------------------------------- returns

    #[test]
    fn min_is_non_expansive(a in -1e6f64..1e6, b in -1e6f64..1e6, c in -1e6f64..1e6, d in -1e6f64..1e6) {
        prop_assert!((a.min(b) - c.min(d)).abs() <= (a - c).abs().max((b - d).abs()));
    }

    #[test]
    fn lambda_endpoints_match_other_estimators(seed in any::<u64>(), depth in 1usize..6, p in 0.0f64..0.6) {
        let tree = random_tree(depth, p, &mut rng_from_seed(seed)).unwrap();
        let cfg = ReturnConfig::default();
        let at = |lambda: f64| tree_lambda_return(&tree, &tree.values, &ReturnConfig { lambda, ..cfg });
        prop_assert_eq!(at(0.0), tree_one_step_return(&tree, &tree.values, &cfg));
        prop_assert_eq!(at(1.0), tree_bootstrapped_return(&tree, &tree.values, &cfg));
        let zeros = vec![0.0; tree.len()];
        prop_assert_eq!(tree_bootstrapped_return(&tree, &zeros, &cfg), tree_mc_return(&tree, &cfg));
    }

    #[test]
    fn identical_children_reduce_to_a_chain(
        depth in 1usize..7,
        first_terminal in 0usize..9,
        values in prop::collection::vec(-1.0f64..2.0, 8),
        lambda in 0.0f64..=1.0,
    ) {
        let cfg = ReturnConfig { lambda, ..ReturnConfig::default() };
        let task = Task::new(StateId(0), StateId(1));
        let mut tree = TreeTrajectory::blank(task, depth).unwrap();
        let level_terminal: Vec<bool> = (0..=depth).map(|d| d >= first_terminal).collect();
        for i in 0..tree.len() {
            let d = dhp_core::tree::node_depth(i);
            tree.terminal[i] = level_terminal[d];
            tree.rewards[i] = if level_terminal[d] { 1.0 } else { 0.0 };
            tree.values[i] = values[d];
        }
        let g = tree_lambda_return(&tree, &tree.values, &cfg);
        let chain = chain_lambda_return(&level_terminal, &values[..=depth], &cfg);
        for i in 0..tree.len() {
            prop_assert!((g[i] - chain[dhp_core::tree::node_depth(i)]).abs() < 1e-12);
        }
    }

    #[test]
    fn operator_iteration_converges(seed in any::<u64>(), cyclic in any::<bool>()) {
        let cfg = ReturnConfig::default();
        let mut rng = rng_from_seed(seed);
        let mdp = random_tree_mdp(63, cyclic, &mut rng);
        let iterations = (1e-8f64.ln() / cfg.gamma.ln()).ceil() as usize;
        for kind in [OperatorKind::T0, OperatorKind::TLambda] {
            let mut v: Vec<f64> = (0..mdp.len()).map(|_| rng.gen_range(-1.0..2.0)).collect();
            let first = sup_distance(&bellman_operator(kind, &mdp, &v, &cfg), &v);
            let mut residual = first;
            for _ in 0..iterations {
                let next = bellman_operator(kind, &mdp, &v, &cfg);
                residual = sup_distance(&next, &v);
                v = next;
            }
            prop_assert!(residual <= 1e-8 * first.max(1.0), "{kind:?} residual {residual}");
        }
    }

    // -------------------------------------------------------------- policy

    #[test]
    fn rows_stay_normalized_after_updates(seed in any::<u64>()) {
        let env = EnvModel::lightsout(2).unwrap();
        let mut policy = PlannerPolicy::for_env(&env).with_hyperparameters(1.0, 0.05);
        let mut values = ValueTable::for_env(&env);
        let mut rng = rng_from_seed(seed);
        for _ in 0..20 {
            let mut batch: Vec<_> = (0..4)
                .map(|_| {
                    let task = env.sample_task(&mut rng, TaskConstraint::Any).unwrap();
                    unroll_marked_tree(&policy, &env, task, 3, 1, SampleMode::Sample, &mut rng).unwrap()
                })
                .collect();
            update_planner(&mut policy, &mut values, &mut batch, &ReturnConfig::default()).unwrap();
        }
        for s in env.states() {
            for g in env.states() {
                let p = policy.probabilities(&Task::new(s, g));
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert!(p.iter().all(|x| x.is_finite() && *x >= 0.0));
            }
        }
    }

    #[test]
    fn entropy_bonus_alone_climbs_to_uniform(logits in prop::collection::vec(-4.0f64..4.0, 2..7)) {
        let m = logits.len();
        let mut table: LogitTable<u32> = LogitTable::new(m);
        table.row_mut(0).copy_from_slice(&logits);
        let target = (m as f64).ln();
        let mut last = entropy(&softmax(&logits));
        for _ in 0..200_000 {
            if target - last < 1e-6 {
                break;
            }
            table.ascend(0, &[(0, 0.0)], 1.0, 0.5);
            let h = entropy(&table.probabilities(&0));
            prop_assert!(h >= last - 1e-12, "entropy fell from {last} to {h}");
            last = h;
        }
        prop_assert!(target - last < 1e-6);
    }

    // ---------------------------------------------------------------- envs

    #[test]
    fn lightsout_presses_commute_and_cancel(seed in any::<u64>(), presses in prop::collection::vec(0usize..9, 0..20)) {
        let env = EnvModel::lightsout(3).unwrap();
        let mut rng = rng_from_seed(seed);
        let start = StateId(rng.gen_range(0..512));
        let apply = |order: &[usize]| order.iter().fold(start, |s, &a| env.step(s, a).unwrap());
        let mut shuffled = presses.clone();
        shuffled.shuffle(&mut rng);
        prop_assert_eq!(apply(&presses), apply(&shuffled));
        let doubled: Vec<usize> = presses.iter().flat_map(|&a| [a, a]).collect();
        prop_assert_eq!(apply(&doubled), start);
    }

    #[test]
    fn maze_reachability_is_symmetric(a in 0u32..25, b in 0u32..25, k in 0u32..9) {
        let env = maze5();
        prop_assert_eq!(env.reachable(StateId(a), StateId(b), k).unwrap(), env.reachable(StateId(b), StateId(a), k).unwrap());
    }

    // ------------------------------------------------------------ explorer

    #[test]
    fn novelty_terms_are_bounded_and_decay(states in prop::collection::vec(0u32..6, 1..30), repeats in 2usize..6) {
        let coarse: Vec<StateId> = states.into_iter().map(StateId).collect();
        let mut table = TripletTable::new();
        let mut previous: Option<Vec<f64>> = None;
        for _ in 0..repeats {
            let r = exploration_reward(&mut table, &coarse, &[2, 4]);
            for (t, &x) in r.iter().enumerate() {
                let live = [2usize, 4].iter().filter(|&&q| t >= q).count() as f64;
                prop_assert!(x >= 0.0 && x <= live);
            }
            if let Some(prev) = &previous {
                prop_assert!(r.iter().zip(prev).all(|(now, before)| now <= before));
            }
            previous = Some(r);
        }
    }

    #[test]
    fn memory_matches_replay_of_the_log(k in 1usize..5, log in prop::collection::vec(0u32..25, 1..80)) {
        let mut memory = MemoryBuffer::new(k, 8).unwrap();
        for (t, &s) in log.iter().enumerate() {
            memory.observe(t, StateId(s));
            let got = memory.extract(t + k);
            for (j, slot) in got.iter().enumerate() {
                let back = (1usize << j) * k;
                let expected = (t + k).checked_sub(back).filter(|&step| step > 0 && step % k == 0 && step <= t).map(|step| StateId(log[step]));
                prop_assert_eq!(*slot, expected.unwrap_or(StateId::NULL));
            }
        }
    }

    // ------------------------------------------------------------- offline

    #[test]
    fn expectile_loss_is_convex_and_mirrored(u in -10.0f64..10.0, w in -10.0f64..10.0, t in 0.0f64..=1.0, tau in 0.01f64..0.99) {
        let mix = expectile_loss(t * u + (1.0 - t) * w, tau);
        prop_assert!(mix <= t * expectile_loss(u, tau) + (1.0 - t) * expectile_loss(w, tau) + 1e-9);
        prop_assert!((expectile_loss(u, tau) - expectile_loss(-u, 1.0 - tau)).abs() < 1e-12);
    }

    #[test]
    fn expectile_descent_finds_the_expectile(xs in prop::collection::vec(-5.0f64..5.0, 1..12), tau in 0.05f64..0.95) {
        let mut c = 0.0;
        for _ in 0..20_000 {
            let g: f64 = xs.iter().map(|&x| expectile_grad(x - c, tau)).sum::<f64>() / xs.len() as f64;
            c += 0.2 * g;
        }
        prop_assert!((c - expectile_by_bisection(&xs, tau)).abs() < 1e-8);
    }

    #[test]
    fn fps_is_deterministic_and_order_free(points in prop::collection::vec(-100.0f64..100.0, 2..20), seed in any::<u64>(), capacity in 2usize..10) {
        let n = points.len() as u32;
        let dist = |a: StateId, b: StateId| (points[a.index()] - points[b.index()]).abs();
        let candidates: Vec<StateId> = (0..n).map(StateId).collect();
        let mut shuffled = candidates.clone();
        shuffled.shuffle(&mut rng_from_seed(seed));
        let run = |cands: &[StateId]| {
            let mut buffer = GoalBuffer::new(capacity);
            buffer.landmarks.push(StateId(0));
            fps_update(&mut buffer, cands, dist).unwrap();
            buffer
        };
        let a = run(&candidates);
        prop_assert_eq!(&a, &run(&candidates));
        let distinct = {
            let mut p = points.clone();
            p.sort_by(f64::total_cmp);
            p.windows(2).all(|w| w[0] != w[1])
        };
        if distinct {
            prop_assert_eq!(&a, &run(&shuffled));
        }
        prop_assert!(a.len() <= capacity);
        let mut seen = a.landmarks.clone();
        seen.sort();
        seen.dedup();
        prop_assert_eq!(seen.len(), a.len());
    }

    #[test]
    fn high_advantage_argmax_ignores_constant_shifts(table in prop::collection::vec(-40i32..40, 36), shift in -40i32..40, s in 0u32..6, g in 0u32..6) {
        let cfg = OfflineConfig::default();
        let build = |offset: i32| {
            let mut v = HierValues::new(6, &cfg);
            for a in 0..6u32 {
                for b in 0..6u32 {
                    v.set_high(StateId(a), StateId(b), f64::from(table[(a * 6 + b) as usize] + offset) / 8.0);
                }
            }
            v
        };
        let argmax = |v: &HierValues| {
            let mut best = 0u32;
            for w in 1..6u32 {
                if v.high_advantage(StateId(s), StateId(w), StateId(g)) > v.high_advantage(StateId(s), StateId(best), StateId(g)) {
                    best = w;
                }
            }
            best
        };
        prop_assert_eq!(argmax(&build(0)), argmax(&build(shift)));
    }

    #[test]
    fn retrieval_stays_inside_the_buffer(seed in any::<u64>(), capacity in 1usize..10) {
        let cfg = OfflineConfig::default();
        let mut rng = rng_from_seed(seed);
        let mut values = HierValues::new(12, &cfg);
        for a in 0..12u32 {
            for b in 0..12u32 {
                values.set_low(StateId(a), StateId(b), rng.gen_range(-10.0..0.0));
            }
        }
        let mut buffer = GoalBuffer::new(capacity);
        let candidates: Vec<StateId> = (0..12).map(StateId).collect();
        fps_update(&mut buffer, &candidates, |a, b| values.distance(a, b)).unwrap();
        for q in 0..12u32 {
            let l = buffer.nearest(StateId(q), |a, b| values.distance(a, b)).unwrap();
            prop_assert!(buffer.landmarks.contains(&l));
        }
        let manager = dhp_core::offline::AwrTable::new(12);
        let stack = dhp_core::offline::offline_plan(&manager, &values, &buffer, Task::new(StateId(0), StateId(11)), &cfg, 8).unwrap();
        for sub in &stack.subgoals[1..] {
            prop_assert!(buffer.landmarks.contains(sub));
        }
    }

    // ------------------------------------------------------------- harness

    #[test]
    fn single_attempt_scoring_fails_on_any_open_branch(seed in any::<u64>(), depth in 1usize..5) {
        let env = EnvModel::lightsout(3).unwrap();
        let policy = random_logit_policy(&env, seed);
        let mut rng = rng_from_seed(seed);
        let task = env.sample_task(&mut rng, TaskConstraint::Solvable { min_distance: 1 }).unwrap();
        let outcome = eval_lightsout_episode(&policy, &env, task, depth, 1, &mut rng_from_seed(1)).unwrap();
        let tree = unroll_marked_tree(&policy, &env, task, depth, 1, SampleMode::Greedy, &mut rng_from_seed(1)).unwrap();
        let open_leaf = (internal_count(depth)..tree.len()).any(|i| !tree.terminal[i]);
        prop_assert_eq!(outcome.success, !open_leaf);
    }
}

#[test]
fn policy_improves_on_a_single_rewarded_subgoal() {
    let candidates = vec![StateId(0), StateId(1), StateId(2)];
    let mut policy = PlannerPolicy::new(candidates, Default::default())
        .unwrap()
        .with_hyperparameters(0.5, 0.0);
    let mut values = ValueTable::new(Default::default(), 0.5);
    let task = Task::new(StateId(0), StateId(2));
    let mut rng = rng_from_seed(3);
    for _ in 0..3000 {
        let mut batch = Vec::new();
        for _ in 0..8 {
            let choice: SubgoalChoice = policy.sample(&task, &mut rng);
            let mut tree = TreeTrajectory::blank(task, 1).unwrap();
            tree.nodes[1] = Task::new(task.init, choice.subgoal);
            tree.nodes[2] = Task::new(choice.subgoal, task.goal);
            tree.actions[0] = Some(choice);
            let hit = choice.subgoal == StateId(1);
            for c in [1, 2] {
                tree.terminal[c] = hit;
                tree.rewards[c] = if hit { 1.0 } else { 0.0 };
            }
            batch.push(tree);
        }
        update_planner(
            &mut policy,
            &mut values,
            &mut batch,
            &ReturnConfig::default(),
        )
        .unwrap();
    }
    assert!(
        policy.probabilities(&task)[1] > 0.99,
        "{:?}",
        policy.probabilities(&task)
    );
}

#[test]
fn lightsout_boards_are_all_solvable() {
    for side in [2, 3] {
        let env = EnvModel::lightsout(side).unwrap();
        for s in env.states() {
            assert!(env.distance(s, env.all_off()).unwrap().is_some());
        }
        if side == 2 {
            for a in env.states() {
                for b in env.states() {
                    for k in 0..5 {
                        assert_eq!(
                            env.reachable(a, b, k).unwrap(),
                            env.reachable(b, a, k).unwrap()
                        );
                    }
                }
            }
        }
    }
}

#[test]
fn explorer_coverage_never_shrinks() {
    let env = maze5();
    let cfg = ExplorerConfig::default();
    let mut policy = ExplorerPolicy::new(&env, &cfg);
    let mut table = TripletTable::new();
    let mut rng = rng_from_seed(4);
    let mut last = [0usize; 2];
    for _ in 0..40 {
        run_exploration(
            &env,
            &mut policy,
            &mut table,
            &cfg,
            &ReturnConfig::default(),
            5,
            GoalSource::Learned,
            &mut rng,
        )
        .unwrap();
        for (slot, q) in cfg.resolutions.iter().enumerate() {
            let now = table.distinct_at(*q);
            assert!(now >= last[slot]);
            last[slot] = now;
        }
    }
}

#[test]
fn metrics_streams_are_monotone_in_step() {
    for mode in [Mode::Online, Mode::ExploreOnly] {
        let cfg = ExperimentConfig {
            updates: 300,
            eval_every: 50,
            eval_episodes: 20,
            mode,
            ..ExperimentConfig::maze(5)
        };
        let out = run_training(&cfg, |_| {}).unwrap();
        assert!(out.records.windows(2).all(|w| w[0].step < w[1].step));
        assert!(out
            .records
            .iter()
            .all(|r| (0.0..=1.0).contains(&r.success_rate)));
    }
}
