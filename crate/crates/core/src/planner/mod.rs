//! Risk-aware task assignment by Monte Carlo tree search.
//!
//! Each tree node is a partial assignment of subtasks to robot groups. A
//! leaf is expanded into every feasible `(subtask, group)` extension, the
//! extensions are scored by the uncertainty-adjusted average completion
//! time ζ, and only the lowest-ζ child per subtask is completed by a
//! randomized greedy rollout. The completed plan is scored by the CVaR of
//! its average makespan over trajectories sampled from the prediction
//! regions, and the normalized score is backed up along the path.

mod schedule;
mod search;
mod team;

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::TargetPath;
use crate::prediction::{sample_trajectory, PredictionBundle};

pub use schedule::{
    enumerate_groups, pursue, simulate_capped, stepwise_simulate, Pinned, PlanningState, Problem, RobotState,
    Schedule, SimParams,
};
pub use search::{
    backpropagate, eval, expand, key_subtasks, reward, risk_measures, rollout, select, uct, uncertainty_margin,
    zeta, Candidate, Evaluation, SearchNode, Tree,
};
pub use team::{Collaboration, Group, Robot, TeamModel};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("no feasible robot group for subtask {subtask}: {reason}")]
    Infeasible { subtask: String, reason: String },
    #[error("rollout deadlocked: no feasible group for subtask {subtask}")]
    Deadlock { subtask: String },
    #[error("simulation exceeded the {limit} s horizon")]
    HorizonExceeded { limit: f64 },
    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    /// Stop after this many iterations, or earlier once the tree is exhausted.
    Iterations(u64),
    /// Wall-clock budget in seconds.
    Seconds(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskConfig {
    pub alpha: f64,
    pub z: usize,
    pub q: f64,
    pub epsilon: f64,
    pub budget: Budget,
    pub seed: u64,
    /// Groups kept per subtask at expansion, lowest start first.
    pub branching_limit: usize,
    /// Include the prediction-region term in ζ.
    pub use_uncertainty: bool,
    /// Correlation of consecutive draws when sampling trajectories.
    pub sample_smoothness: f64,
    /// Iterations without improvement after which the search counts as converged.
    pub convergence_window: u64,
}

impl Default for RiskConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            z: 50,
            q: 1.5,
            epsilon: 0.3,
            budget: Budget::Seconds(10.0),
            seed: 0,
            branching_limit: 64,
            use_uncertainty: true,
            sample_smoothness: 0.0,
            convergence_window: 200,
        }
    }
}

impl RiskConfig {
    pub fn validate(&self) -> Result<(), PlanError> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(PlanError::InvalidConfig(format!("alpha {} outside (0, 1]", self.alpha)));
        }
        if self.z == 0 {
            return Err(PlanError::InvalidConfig("z must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(PlanError::InvalidConfig(format!("epsilon {} outside [0, 1]", self.epsilon)));
        }
        if self.branching_limit == 0 {
            return Err(PlanError::InvalidConfig("branching limit must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedAction {
    pub t: f64,
    pub action: String,
    pub target: String,
    pub subtask: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledSubtask {
    pub id: usize,
    pub name: String,
    pub start: f64,
    pub completion: f64,
    pub group: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    /// Per-robot timed action sequences predicted on the mean trajectories.
    pub robots: BTreeMap<String, Vec<TimedAction>>,
    pub subtasks: Vec<ScheduledSubtask>,
    /// Assignments in decision order; replaying them reproduces the plan.
    pub order: Vec<(usize, Group)>,
    /// Average makespan on the mean trajectories.
    pub predicted_makespan: f64,
    pub var: f64,
    pub cvar: f64,
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SearchStats {
    pub iterations: u64,
    pub nodes: usize,
    pub evaluations: u64,
    /// Children discarded because ζ was infinite.
    pub infinite_children: u64,
    pub first_solution_s: f64,
    pub convergence_s: f64,
    pub convergence_iteration: u64,
    pub exhausted: bool,
    /// The incumbent survived `convergence_window` iterations, or the tree was exhausted.
    pub converged: bool,
    /// `(iteration, seconds, cvar)` each time the incumbent improved.
    pub incumbent_history: Vec<(u64, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanOutcome {
    pub plan: Plan,
    pub stats: SearchStats,
}

/// Draws `z` trajectory sets from `bundle` with seeds derived from `seed`.
pub fn draw_samples(bundle: &PredictionBundle, z: usize, seed: u64, smoothness: f64) -> Vec<Vec<TargetPath>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..z)
        .map(|_| sample_trajectory(bundle, rng.gen(), smoothness))
        .collect()
}

/// Builds the timed plan for `order` on the mean trajectories.
pub fn build_plan(p: &Problem, bundle: &PredictionBundle, order: &[(usize, Group)], evaluation: Evaluation) -> Plan {
    let paths = bundle.mean_paths();
    let s = simulate_capped(p, &paths, order);
    let mut robots: BTreeMap<String, Vec<TimedAction>> =
        p.team.robots.iter().map(|r| (r.id.clone(), Vec::new())).collect();
    let mut subtasks = Vec::new();
    for (w, g) in order {
        let st = &p.poset.subtasks[*w];
        let start = s.start[*w].unwrap_or(f64::INFINITY);
        for (r, a) in g.robots.iter().zip(&g.actions) {
            robots.get_mut(&p.team.robots[*r].id).unwrap().push(TimedAction {
                t: start,
                action: a.clone().unwrap_or_else(|| "reach".into()),
                target: st.target.clone(),
                subtask: st.name.clone(),
            });
        }
        subtasks.push(ScheduledSubtask {
            id: *w,
            name: st.name.clone(),
            start,
            completion: s.completion[*w].unwrap_or(f64::INFINITY),
            group: g.robots.iter().map(|&r| p.team.robots[r].id.clone()).collect(),
        });
    }
    Plan {
        robots,
        subtasks,
        order: order.to_vec(),
        predicted_makespan: s.objective(p),
        var: evaluation.var,
        cvar: evaluation.cvar,
        samples: evaluation.samples,
    }
}

/// Fails with `Infeasible` when some open subtask has no live group or only
/// groups slower than its target.
pub fn check_feasible(p: &Problem, bundle: &PredictionBundle) -> Result<(), PlanError> {
    for w in p.open_subtasks() {
        let name = p.poset.subtasks[w].name.clone();
        if p.groups[w].is_empty() {
            return Err(PlanError::Infeasible {
                subtask: name,
                reason: "no live robots cover its actions".into(),
            });
        }
        if p.groups[w].iter().all(|g| search::outpaced(p, bundle, w, g)) {
            return Err(PlanError::Infeasible {
                subtask: name,
                reason: format!(
                    "every capable group is no faster than target {} ({:.3} m/s)",
                    p.poset.subtasks[w].target,
                    bundle.targets[p.target_of[w]].vmax
                ),
            });
        }
    }
    Ok(())
}

/// Searches for the assignment of all open subtasks with the smallest CVaR
/// of average makespan.
pub fn cp_mcts(p: &Problem, bundle: &PredictionBundle, cfg: &RiskConfig) -> Result<PlanOutcome, PlanError> {
    cfg.validate()?;
    check_feasible(p, bundle)?;
    let clock = Instant::now();
    let mean = bundle.mean_paths();
    let samples = draw_samples(bundle, cfg.z, cfg.seed, cfg.sample_smoothness);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5DEE_CE66_D1CE_4E5B);
    let mut tree = Tree::with_root(Schedule::initial(p, &mean));
    let mut stats = SearchStats::default();
    let mut best: Option<(Vec<(usize, Group)>, Evaluation)> = None;
    let mut eta_best = f64::INFINITY;

    let record = |order: Vec<(usize, Group)>,
                      e: Evaluation,
                      stats: &mut SearchStats,
                      best: &mut Option<(Vec<(usize, Group)>, Evaluation)>,
                      eta_best: &mut f64|
     -> f64 {
        stats.evaluations += 1;
        let eta = e.cvar;
        if eta < *eta_best {
            let t = clock.elapsed().as_secs_f64();
            if best.is_none() {
                stats.first_solution_s = t;
            }
            *eta_best = eta;
            stats.convergence_s = t;
            stats.convergence_iteration = stats.iterations;
            stats.incumbent_history.push((stats.iterations, t, eta));
            *best = Some((order, e));
        }
        reward(eta, *eta_best)
    };

    loop {
        let done = match cfg.budget {
            Budget::Iterations(n) => stats.iterations >= n,
            Budget::Seconds(s) => clock.elapsed().as_secs_f64() >= s,
        };
        if done {
            break;
        }
        let Some(leaf) = select(&tree, 0, cfg.q) else {
            stats.exhausted = true;
            break;
        };
        stats.iterations += 1;

        if tree.nodes[leaf].schedule.is_complete() {
            let order = tree.nodes[leaf].schedule.order.clone();
            let e = eval(p, &order, &samples, cfg.alpha);
            let xi = record(order, e, &mut stats, &mut best, &mut eta_best);
            backpropagate(&mut tree, leaf, xi);
            tree.mark_exhausted(leaf);
        } else {
            let mut cands = expand(p, bundle, &mean, &tree.nodes[leaf].schedule, cfg.use_uncertainty);
            let total = cands.len();
            cands.retain(|c| c.zeta.is_finite());
            stats.infinite_children += (total - cands.len()) as u64;
            let mut by_subtask: BTreeMap<usize, Vec<Candidate>> = BTreeMap::new();
            for c in cands {
                by_subtask.entry(c.subtask).or_default().push(c);
            }
            tree.nodes[leaf].expanded = true;
            let mut filtered = Vec::new();
            for (_, mut group) in by_subtask {
                group.sort_by(|a, b| a.start.total_cmp(&b.start));
                group.truncate(cfg.branching_limit);
                let mut pick: Option<(usize, f64)> = None;
                for c in group {
                    let z = c.zeta;
                    let id = tree.add_child(leaf, c.schedule, z);
                    if pick.map_or(true, |(_, bz)| z < bz) {
                        pick = Some((id, z));
                    }
                }
                filtered.extend(pick.map(|x| x.0));
            }
            if tree.nodes[leaf].children.is_empty() {
                if leaf == 0 {
                    return Err(PlanError::Infeasible {
                        subtask: "root".into(),
                        reason: "every extension of the root has infinite ζ".into(),
                    });
                }
                tree.mark_exhausted(leaf);
                continue;
            }
            filtered.sort_by(|&a, &b| tree.nodes[a].zeta.total_cmp(&tree.nodes[b].zeta).then(a.cmp(&b)));
            for child in filtered {
                let start = tree.nodes[child].schedule.clone();
                let completed = match rollout(p, bundle, &mean, start, cfg.epsilon, &mut rng) {
                    Ok(s) => s,
                    Err(PlanError::Deadlock { .. }) => {
                        backpropagate(&mut tree, child, -1.0);
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                let order = completed.order.clone();
                let e = eval(p, &order, &samples, cfg.alpha);
                let xi = record(order, e, &mut stats, &mut best, &mut eta_best);
                backpropagate(&mut tree, child, xi);
            }
        }
    }

    stats.nodes = tree.nodes.len();
    stats.converged = stats.exhausted || stats.iterations - stats.convergence_iteration >= cfg.convergence_window;
    let (order, e) = best.ok_or_else(|| PlanError::Infeasible {
        subtask: "root".into(),
        reason: "search produced no complete plan".into(),
    })?;
    Ok(PlanOutcome {
        plan: build_plan(p, bundle, &order, e),
        stats,
    })
}

/// Scores an existing assignment against a fresh bundle.
pub fn evaluate_order(
    p: &Problem,
    bundle: &PredictionBundle,
    order: &[(usize, Group)],
    cfg: &RiskConfig,
) -> Evaluation {
    let samples = draw_samples(bundle, cfg.z, cfg.seed, cfg.sample_smoothness);
    eval(p, order, &samples, cfg.alpha)
}
