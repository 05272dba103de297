use std::collections::BTreeSet;

use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use umbrella::formula::{parse_scltl, to_automaton};
use umbrella::geom::{Point, TargetPath};
use umbrella::poset::{compute_poset, PrecedenceSemantics, RPoset};
use umbrella::planner::*;
use umbrella::prediction::{PredictionBundle, TargetForecast};

fn poset(tasks: &[(&str, &str)]) -> RPoset {
    RPoset::disjoint_union(
        tasks
            .iter()
            .map(|(name, text)| {
                let a = to_automaton(&parse_scltl(text).unwrap()).unwrap();
                (name.to_string(), compute_poset(&a).unwrap())
            })
            .collect(),
    )
}

fn robot(id: &str, caps: &[&str], vmax: f64, position: Point) -> Robot {
    Robot {
        id: id.into(),
        capabilities: caps.iter().map(|s| s.to_string()).collect(),
        vmax,
        position,
    }
}

fn collab(id: &str, actions: &[&str], duration: f64) -> Collaboration {
    Collaboration {
        id: id.into(),
        actions: actions.iter().map(|s| s.to_string()).collect(),
        duration,
    }
}

/// Forecast of a target moving with constant velocity `vel`, sampled every
/// `dt` for `steps` steps.
fn moving(id: &str, origin: Point, vel: Point, dt: f64, steps: usize, radius: f64, vmax: f64) -> TargetForecast {
    TargetForecast {
        id: id.into(),
        origin,
        yhat: (1..=steps)
            .map(|h| [origin[0] + vel[0] * dt * h as f64, origin[1] + vel[1] * dt * h as f64])
            .collect(),
        radii: vec![radius; steps],
        vmax,
    }
}

fn fixed(id: &str, at: Point) -> TargetForecast {
    moving(id, at, [0.0, 0.0], 1.0, 5, 0.0, 0.0)
}

fn bundle(dt: f64, targets: Vec<TargetForecast>) -> PredictionBundle {
    PredictionBundle {
        t0: 0.0,
        dt,
        delta: 0.15,
        targets,
    }
}

fn ids(b: &PredictionBundle) -> Vec<String> {
    b.targets.iter().map(|t| t.id.clone()).collect()
}

fn params(dt: f64, threshold: f64) -> SimParams {
    SimParams {
        dt,
        reach_threshold: threshold,
        max_time: 500.0,
        semantics: PrecedenceSemantics::StartCompletion,
    }
}

fn iters(n: u64) -> RiskConfig {
    RiskConfig {
        budget: Budget::Iterations(n),
        z: 10,
        ..RiskConfig::default()
    }
}

#[test]
fn single_subtask_static_target_kinematics() {
    let team = TeamModel {
        robots: vec![robot("r1", &["inspect"], 2.0, [0.0, 0.0])],
        collaborations: vec![collab("inspect", &["inspect"], 3.0)],
    };
    let p = poset(&[("t", "F inspect(a)")]);
    let b = bundle(1.0, vec![fixed("a", [10.0, 0.0])]);
    let state = PlanningState::initial(&team);
    let prob = Problem::new(&team, &p, &state, params(0.1, 0.0), &ids(&b)).unwrap();
    let out = cp_mcts(&prob, &b, &iters(20)).unwrap();
    assert_eq!(out.plan.subtasks.len(), 1);
    assert_abs_diff_eq!(out.plan.subtasks[0].completion, 8.0, epsilon = 0.1);
    assert_abs_diff_eq!(out.plan.cvar, 8.0, epsilon = 0.1);
    assert_eq!(out.plan.cvar, out.plan.var);
    assert!(out.plan.samples.iter().all(|&s| s == out.plan.samples[0]));
}

#[test]
fn pursuit_of_fleeing_target() {
    let path = TargetPath::new(0.0, 1.0, (0..100).map(|k| [10.0 + k as f64, 0.0]).collect());
    let (t, pos) = pursue([0.0, 0.0], 0.0, 2.0, &path, 0.0, 0.1, 100.0).unwrap();
    assert_abs_diff_eq!(t, 10.0, epsilon = 0.1);
    assert_abs_diff_eq!(pos[0], 20.0, epsilon = 0.2);
    let slow = pursue([0.0, 0.0], 0.0, 1.0, &path, 0.0, 0.1, 50.0);
    assert!(slow.is_none());
}

#[test]
fn collaboration_waits_for_last_member() {
    let team = TeamModel {
        robots: vec![
            robot("a", &["lift"], 1.0, [4.0, 0.0]),
            robot("b", &["hold"], 1.0, [-6.0, 0.0]),
        ],
        collaborations: vec![collab("carry", &["lift", "hold"], 2.0)],
    };
    let p = poset(&[("t", "F carry(box)")]);
    let b = bundle(1.0, vec![fixed("box", [0.0, 0.0])]);
    let state = PlanningState::initial(&team);
    let prob = Problem::new(&team, &p, &state, params(0.5, 0.0), &ids(&b)).unwrap();
    assert_eq!(prob.groups[0].len(), 1);
    let s = stepwise_simulate(&prob, &b.mean_paths(), &[(0, prob.groups[0][0].clone())]).unwrap();
    assert_abs_diff_eq!(s.start[0].unwrap(), 6.0, epsilon = 1e-9);
    assert_abs_diff_eq!(s.completion[0].unwrap(), 8.0, epsilon = 1e-9);
}

#[test]
fn two_independent_subtasks_run_concurrently() {
    let team = TeamModel {
        robots: vec![
            robot("r1", &["look"], 1.0, [0.0, 0.0]),
            robot("r2", &["look"], 1.0, [0.0, 0.0]),
        ],
        collaborations: vec![collab("look", &["look"], 1.0)],
    };
    let p = poset(&[("a", "F look(x)"), ("b", "F look(y)")]);
    let b = bundle(1.0, vec![fixed("x", [5.0, 0.0]), fixed("y", [0.0, 5.0])]);
    let state = PlanningState::initial(&team);
    let prob = Problem::new(&team, &p, &state, params(0.1, 0.0), &ids(&b)).unwrap();
    let paths = b.mean_paths();

    let mut brute = Vec::new();
    for g0 in &prob.groups[0] {
        for g1 in &prob.groups[1] {
            for order in [vec![(0, g0.clone()), (1, g1.clone())], vec![(1, g1.clone()), (0, g0.clone())]] {
                let s = stepwise_simulate(&prob, &paths, &order).unwrap();
                brute.push((s.objective(&prob), g0.robots != g1.robots));
            }
        }
    }
    let best = brute.iter().map(|x| x.0).fold(f64::INFINITY, f64::min);
    let sequential = brute.iter().filter(|x| !x.1).map(|x| x.0).fold(f64::INFINITY, f64::min);
    assert!(best < sequential);

    let cfg = RiskConfig {
        budget: Budget::Iterations(u64::MAX),
        ..iters(0)
    };
    let out = cp_mcts(&prob, &b, &cfg).unwrap();
    assert!(out.stats.exhausted);
    assert_abs_diff_eq!(out.plan.cvar, best, epsilon = 1e-9);
    let g: Vec<_> = out.plan.subtasks.iter().map(|s| s.group.clone()).collect();
    assert_ne!(g[0], g[1]);
    assert_abs_diff_eq!(out.plan.cvar, 6.0, epsilon = 1e-9);
}

#[test]
fn uct_prefers_less_visited_child() {
    let mut tree = Tree::with_root(empty_schedule());
    tree.nodes[0].expanded = true;
    tree.nodes[0].visits = 6;
    let a = tree.add_child(0, empty_schedule(), 0.0);
    let b = tree.add_child(0, empty_schedule(), 0.0);
    tree.nodes[a].visits = 5;
    tree.nodes[a].value_sum = 5.0;
    tree.nodes[b].visits = 1;
    tree.nodes[b].value_sum = 0.5;
    tree.nodes[a].expanded = false;
    assert_abs_diff_eq!(uct(&tree.nodes[a], 6, 1.5), 1.0 + 1.5 * (6f64.ln() / 5.0).sqrt(), epsilon = 1e-12);
    assert_abs_diff_eq!(uct(&tree.nodes[b], 6, 1.5), 2.51, epsilon = 0.01);
    assert_abs_diff_eq!(uct(&tree.nodes[a], 6, 1.5), 1.90, epsilon = 0.01);
    assert_eq!(select(&tree, 0, 1.5), Some(b));
    assert_eq!(select(&tree, 0, 0.0), Some(a));

    let c = tree.add_child(0, empty_schedule(), 0.0);
    assert_eq!(select(&tree, 0, 1.5), Some(c));
    let d = tree.add_child(0, empty_schedule(), 0.0);
    assert_eq!(select(&tree, 0, 1.5), Some(c), "ties go to the earlier child");
    let _ = d;
}

fn empty_schedule() -> Schedule {
    Schedule {
        robot_pos: vec![],
        robot_free: vec![],
        start: vec![None],
        completion: vec![None],
        order: vec![],
        queues: vec![],
        overflow: false,
    }
}

#[test]
fn backpropagation_touches_path_to_root() {
    let mut tree = Tree::with_root(empty_schedule());
    let a = tree.add_child(0, empty_schedule(), 0.0);
    let b = tree.add_child(a, empty_schedule(), 0.0);
    let c = tree.add_child(b, empty_schedule(), 0.0);
    let sibling = tree.add_child(0, empty_schedule(), 0.0);
    assert_eq!(backpropagate(&mut tree, c, 0.5), 4);
    for n in [0, a, b, c] {
        assert_eq!(tree.nodes[n].visits, 1);
        assert_eq!(tree.nodes[n].mean_value(), 0.5);
    }
    assert_eq!(tree.nodes[sibling].visits, 0);
}

#[test]
fn reward_normalization() {
    assert_eq!(reward(10.0, 10.0), 1.0);
    assert_eq!(reward(20.0, 10.0), 0.0);
    assert_eq!(reward(35.0, 10.0), -1.0);
    assert_eq!(reward(15.0, 10.0), 0.5);
}

#[test]
fn risk_measures_on_hand_sorted_samples() {
    let s: Vec<f64> = (0..10).map(|i| 10.0 + 2.0 * i as f64).collect();
    assert_eq!(risk_measures(&s, 0.2), (26.0, 27.0));
    let (var, cvar) = risk_measures(&s, 1.0);
    assert_eq!(var, 10.0);
    assert_abs_diff_eq!(cvar, s.iter().sum::<f64>() / 10.0, epsilon = 1e-12);
    assert_eq!(risk_measures(&s, 0.01), (28.0, 28.0));
    assert_eq!(risk_measures(&[5.0; 4], 0.3), (5.0, 5.0));
}

#[test]
fn group_enumeration_merges_role_assignments() {
    let team = TeamModel {
        robots: vec![
            robot("a", &["x", "y"], 1.0, [0.0, 0.0]),
            robot("b", &["x", "y"], 1.0, [0.0, 0.0]),
            robot("c", &["x", "y"], 1.0, [0.0, 0.0]),
        ],
        collaborations: vec![collab("pair", &["x", "y"], 1.0), collab("solo", &["x"], 1.0)],
    };
    let p = poset(&[("t", "F pair(m)"), ("u", "F solo(m)"), ("v", "F (pair(m) & reach(b,m))")]);
    let alive = [true; 3];
    let pairs = enumerate_groups(&team, &p, 0, &alive).unwrap();
    let robot_sets: Vec<_> = pairs.iter().map(|g| g.robots.clone()).collect();
    assert_eq!(robot_sets, vec![vec![0, 1], vec![0, 2], vec![1, 2]]);
    assert_eq!(pairs[0].actions, vec![Some("x".into()), Some("y".into())]);

    let mut brute = BTreeSet::new();
    for i in 0..3 {
        for j in 0..3 {
            if i != j {
                brute.insert(BTreeSet::from([i, j]));
            }
        }
    }
    assert_eq!(brute.len(), robot_sets.len());

    assert_eq!(enumerate_groups(&team, &p, 1, &alive).unwrap().len(), 3);
    let with_b = enumerate_groups(&team, &p, 2, &alive).unwrap();
    assert!(with_b.iter().all(|g| g.contains(1)));
    assert_eq!(with_b.len(), 2);
    assert!(enumerate_groups(&team, &p, 2, &[true, false, true]).unwrap().is_empty());
}

#[test]
fn one_capable_robot_gives_one_child_per_subtask() {
    let team = TeamModel {
        robots: vec![robot("r", &["x"], 1.0, [0.0, 0.0]), robot("s", &["y"], 1.0, [0.0, 0.0])],
        collaborations: vec![collab("c", &["x"], 1.0)],
    };
    let p = poset(&[("a", "F c(m)"), ("b", "F c(n)")]);
    let b = bundle(1.0, vec![fixed("m", [1.0, 0.0]), fixed("n", [2.0, 0.0])]);
    let state = PlanningState::initial(&team);
    let prob = Problem::new(&team, &p, &state, params(0.5, 0.0), &ids(&b)).unwrap();
    let root = Schedule::initial(&prob, &b.mean_paths());
    let kids = expand(&prob, &b, &b.mean_paths(), &root, true);
    assert_eq!(kids.len(), 2);
    assert_eq!(kids.iter().map(|c| c.subtask).collect::<Vec<_>>(), vec![0, 1]);
}

#[test]
fn key_subtask_definition() {
    let mut s = empty_schedule();
    s.queues = vec![vec![0, 1]];
    assert_eq!(key_subtasks(&s), vec![0]);
    s.queues = vec![vec![0, 2], vec![1, 0]];
    assert_eq!(key_subtasks(&s), vec![1]);
    s.queues = vec![vec![0], vec![1], vec![]];
    assert_eq!(key_subtasks(&s), vec![0, 1]);
}

fn pursuit_setup(robot_speed: f64, target_speed: f64, radius: f64) -> (TeamModel, RPoset, PredictionBundle) {
    let team = TeamModel {
        robots: vec![robot("r", &["tag"], robot_speed, [0.0, 0.0])],
        collaborations: vec![collab("tag", &["tag"], 0.0)],
    };
    let p = poset(&[("t", "F tag(a)")]);
    let b = bundle(1.0, vec![moving("a", [10.0, 0.0], [target_speed, 0.0], 1.0, 60, radius, target_speed)]);
    (team, p, b)
}

#[test]
fn zeta_adds_region_margin_for_key_subtasks() {
    let (team, p, b) = pursuit_setup(2.0, 1.0, 2.0);
    let state = PlanningState::initial(&team);
    let prob = Problem::new(&team, &p, &state, params(0.1, 0.0), &ids(&b)).unwrap();
    let paths = b.mean_paths();
    let mut s = Schedule::initial(&prob, &paths);
    s.assign(&prob, &paths, 0, prob.groups[0][0].clone());
    let t = s.completion[0].unwrap();
    assert_abs_diff_eq!(t, 10.0, epsilon = 0.1);
    assert_abs_diff_eq!(zeta(&prob, &b, &s, false), t, epsilon = 1e-12);
    assert_abs_diff_eq!(zeta(&prob, &b, &s, true), t + 2.0, epsilon = 1e-12);
    assert_abs_diff_eq!(uncertainty_margin(&prob, &b, &s, 0), 2.0, epsilon = 1e-12);

    let zero = b.without_uncertainty();
    assert_abs_diff_eq!(zeta(&prob, &zero, &s, true), t, epsilon = 1e-12);
}

#[test]
fn outpaced_robot_makes_zeta_infinite_and_plan_infeasible() {
    let (team, p, b) = pursuit_setup(1.0, 1.0, 0.0);
    let state = PlanningState::initial(&team);
    let prob = Problem::new(&team, &p, &state, params(0.5, 0.0), &ids(&b)).unwrap();
    let paths = b.mean_paths();
    let root = Schedule::initial(&prob, &paths);
    let kids = expand(&prob, &b, &paths, &root, true);
    assert_eq!(kids.len(), 1);
    assert!(kids[0].zeta.is_infinite());
    assert!(matches!(cp_mcts(&prob, &b, &iters(10)), Err(PlanError::Infeasible { .. })));
}

#[test]
fn outpaced_child_never_simulated_when_alternative_exists() {
    let team = TeamModel {
        robots: vec![
            robot("slow", &["tag"], 1.0, [9.0, 0.0]),
            robot("fast", &["tag"], 3.0, [-20.0, 0.0]),
        ],
        collaborations: vec![collab("tag", &["tag"], 0.0)],
    };
    let p = poset(&[("t", "F tag(a)")]);
    let b = bundle(1.0, vec![moving("a", [10.0, 0.0], [1.0, 0.0], 1.0, 100, 0.0, 1.0)]);
    let state = PlanningState::initial(&team);
    let prob = Problem::new(&team, &p, &state, params(0.5, 0.0), &ids(&b)).unwrap();
    let out = cp_mcts(&prob, &b, &iters(50)).unwrap();
    assert_eq!(out.stats.infinite_children, 1);
    assert_eq!(out.plan.subtasks[0].group, vec!["fast".to_string()]);
}

#[test]
fn rollout_is_greedy_without_randomness_and_respects_precedence() {
    let team = TeamModel {
        robots: vec![
            robot("near", &["m", "f"], 1.0, [1.0, 0.0]),
            robot("far", &["m", "f"], 1.0, [30.0, 0.0]),
        ],
        collaborations: vec![collab("monitor", &["m"], 2.0), collab("film", &["f"], 3.0)],
    };
    let p = poset(&[("t", "F (monitor(a) & !film(a) & F film(a))")]);
    assert_eq!(p.precedence.len(), 1);
    let b = bundle(1.0, vec![fixed("a", [0.0, 0.0])]);
    let state = PlanningState::initial(&team);
    let prob = Problem::new(&team, &p, &state, params(0.5, 0.0), &ids(&b)).unwrap();
    let paths = b.mean_paths();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let first = rollout(&prob, &b, &paths, Schedule::initial(&prob, &paths), 0.0, &mut rng).unwrap();
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let again = rollout(&prob, &b, &paths, Schedule::initial(&prob, &paths), 0.0, &mut rng).unwrap();
        assert_eq!(again.order, first.order);
    }
    assert!(first.order.iter().all(|(_, g)| g.robots == vec![0]));
    let (m, f) = (first.order[0].0, first.order[1].0);
    assert!(first.start[f].unwrap() >= first.completion[m].unwrap());
}

#[test]
fn random_rollout_groups_are_uniform() {
    let team = TeamModel {
        robots: (0..4).map(|i| robot(&format!("r{i}"), &["x"], 1.0 + i as f64, [0.0, 0.0])).collect(),
        collaborations: vec![collab("c", &["x"], 1.0)],
    };
    let p = poset(&[("t", "F c(m)")]);
    let b = bundle(1.0, vec![fixed("m", [3.0, 4.0])]);
    let state = PlanningState::initial(&team);
    let prob = Problem::new(&team, &p, &state, params(0.5, 0.0), &ids(&b)).unwrap();
    let paths = b.mean_paths();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 10_000;
    let mut counts = [0f64; 4];
    for _ in 0..n {
        let s = rollout(&prob, &b, &paths, Schedule::initial(&prob, &paths), 1.0, &mut rng).unwrap();
        counts[s.order[0].1.robots[0]] += 1.0;
    }
    let expected = n as f64 / 4.0;
    let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
    let p_value = 1.0 - ChiSquared::new(3.0).unwrap().cdf(chi2);
    assert!(p_value > 0.01, "chi-square {chi2}, p {p_value}, counts {counts:?}");
}

#[test]
fn degenerate_search_is_reproducible() {
    let team = TeamModel {
        robots: vec![
            robot("a", &["x"], 1.0, [0.0, 0.0]),
            robot("b", &["x"], 1.5, [10.0, 0.0]),
            robot("c", &["x"], 2.0, [0.0, 10.0]),
        ],
        collaborations: vec![collab("c", &["x"], 1.0)],
    };
    let p = poset(&[("t1", "F c(m)"), ("t2", "F c(n)"), ("t3", "F (c(m) & X F c(o))")]);
    let b = bundle(
        1.0,
        vec![
            moving("m", [5.0, 5.0], [0.3, 0.0], 1.0, 80, 1.0, 0.3),
            moving("n", [-5.0, 5.0], [0.0, 0.2], 1.0, 80, 2.0, 0.2),
            fixed("o", [8.0, 8.0]),
        ],
    );
    let state = PlanningState::initial(&team);
    let prob = Problem::new(&team, &p, &state, params(0.5, 0.5), &ids(&b)).unwrap();
    let a1 = cp_mcts(&prob, &b, &iters(60)).unwrap();
    let a2 = cp_mcts(&prob, &b, &iters(60)).unwrap();
    assert_eq!(a1.plan, a2.plan);
    let h = &a1.stats.incumbent_history;
    assert!(h.windows(2).all(|w| w[1].2 < w[0].2));
    assert_eq!(h.last().unwrap().2, a1.plan.cvar);
}

fn arb_instance() -> impl Strategy<Value = (Vec<(f64, f64, f64)>, Vec<(f64, f64)>, usize, bool)> {
    (
        prop::collection::vec((-20.0..20.0f64, -20.0..20.0f64, 0.5..3.0f64), 1..=3),
        prop::collection::vec((-20.0..20.0f64, -20.0..20.0f64), 3),
        0..4usize,
        any::<bool>(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn plans_respect_precedence_and_exclusion((robots, targets, shape, start_start) in arb_instance()) {
        let team = TeamModel {
            robots: robots
                .iter()
                .enumerate()
                .map(|(i, &(x, y, v))| robot(&format!("r{i}"), &["m", "f"], v, [x, y]))
                .collect(),
            collaborations: vec![collab("monitor", &["m"], 2.0), collab("film", &["f"], 1.5)],
        };
        let tasks: Vec<(&str, &str)> = match shape {
            0 => vec![("a", "F (monitor(t0) & !film(t0) & F film(t0))")],
            1 => vec![("a", "F (monitor(t0) & !film(t1) & F film(t1))"), ("b", "F monitor(t2)")],
            2 => vec![("a", "F monitor(t0) & F film(t0)"), ("b", "F (film(t1) & X F monitor(t2))")],
            _ => vec![("a", "!film(t0) U monitor(t0)"), ("b", "F (film(t0) & F monitor(t1))")],
        };
        let p = poset(&tasks);
        let b = bundle(
            1.0,
            (0..3).map(|m| moving(&format!("t{m}"), [targets[m].0, targets[m].1], [0.1, 0.0], 1.0, 200, 1.0, 0.1)).collect(),
        );
        let mut state = PlanningState::initial(&team);
        state.now = 0.0;
        let semantics = if start_start { PrecedenceSemantics::StartStart } else { PrecedenceSemantics::StartCompletion };
        let sp = SimParams { semantics, ..params(0.5, 0.5) };
        let prob = Problem::new(&team, &p, &state, sp, &ids(&b)).unwrap();
        let out = cp_mcts(&prob, &b, &iters(15)).unwrap();
        let s = stepwise_simulate(&prob, &b.mean_paths(), &out.plan.order).unwrap();
        for &(a, c) in &p.precedence {
            let bound = if start_start { s.start[a].unwrap() } else { s.completion[a].unwrap() };
            prop_assert!(s.start[c].unwrap() >= bound - 1e-9);
        }
        for set in &p.exclusion {
            let v: Vec<usize> = set.iter().copied().collect();
            for i in 0..v.len() {
                for j in i + 1..v.len() {
                    let (a, c) = (v[i], v[j]);
                    let disjoint = s.completion[a].unwrap() <= s.start[c].unwrap() + 1e-9
                        || s.completion[c].unwrap() <= s.start[a].unwrap() + 1e-9;
                    prop_assert!(disjoint);
                }
            }
        }
        for (_, q) in &out.plan.robots {
            prop_assert!(q.windows(2).all(|w| w[0].t < w[1].t));
        }
        let h = &out.stats.incumbent_history;
        prop_assert!(h.windows(2).all(|w| w[1].2 < w[0].2));
    }
}
