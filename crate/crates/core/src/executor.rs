//! Receding-horizon mission execution on hidden ground truth.
//!
//! Every tick the robots advance along their queues, running subtasks start
//! and complete, reactive rules and scripted failures fire, and the planner
//! is re-invoked when new tasks arrive, a robot fails, or the current plan's
//! re-evaluated risk exceeds `(1+γ)` times the expected remaining makespan.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formula::{parse_scltl, to_automaton, FiniteAutomaton, Formula, FormulaError, Letter};
use crate::geom::{dist, max_speed, step_toward, Point, TargetPath};
use crate::planner::{
    cp_mcts, evaluate_order, Group, Pinned, PlanError, PlanOutcome, PlanningState, Problem, RiskConfig, RobotState, SimParams,
    TeamModel,
};
use crate::poset::{compute_poset, PosetError, PrecedenceSemantics, RPoset};
use crate::prediction::{Forecaster, PredictionBundle, PredictionError, TargetForecast};

#[derive(Debug, Error)]
pub enum MissionError {
    #[error("mission exceeded the {0} s cap")]
    Timeout(f64),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Prediction(#[from] PredictionError),
    #[error(transparent)]
    Formula(#[from] FormulaError),
    #[error("task {task}: {source}")]
    Poset { task: String, source: PosetError },
    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },
}

/// How the planner sees the targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Calibrated forecasts with prediction regions.
    Ours,
    /// Targets frozen at their last observed position.
    Ntp,
    /// Forecasts without prediction regions.
    Nu,
    /// The true future trajectories, without regions.
    Cs,
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ours" => Ok(Method::Ours),
            "ntp" => Ok(Method::Ntp),
            "nu" => Ok(Method::Nu),
            "cs" => Ok(Method::Cs),
            _ => Err(format!("unknown method `{s}`")),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Ours => "ours",
            Method::Ntp => "ntp",
            Method::Nu => "nu",
            Method::Cs => "cs",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub formula: Formula,
    pub priority: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trigger {
    Time { at: f64 },
    /// Some live robot (or the named one) comes within `radius` of `target`.
    Proximity {
        target: String,
        radius: f64,
        #[serde(default)]
        robot: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReactiveRule {
    pub event: String,
    pub trigger: Trigger,
    /// Response formula text; the released task is `F (response)`.
    pub response: String,
    #[serde(default)]
    pub priority: Option<f64>,
    #[serde(default)]
    pub fired: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureEvent {
    pub robot: String,
    pub at: f64,
}

/// Hidden target trajectories sampled every `dt`; sample `warmup` is
/// mission time zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub ids: Vec<String>,
    pub dt: f64,
    pub warmup: usize,
    pub points: Vec<Vec<Point>>,
}

impl GroundTruth {
    pub fn path(&self, m: usize) -> TargetPath {
        TargetPath::new(-(self.warmup as f64) * self.dt, self.dt, self.points[m].clone())
    }

    pub fn position(&self, m: usize, t: f64) -> Point {
        self.path(m).at(t)
    }

    /// Index of the last sample observed by mission time `t`.
    pub fn index_at(&self, t: f64) -> usize {
        self.warmup + (t / self.dt + 1e-9).floor().max(0.0) as usize
    }

    pub fn history(&self, m: usize, t: f64) -> &[Point] {
        let k = self.index_at(t).min(self.points[m].len() - 1);
        &self.points[m][..=k]
    }

    /// Mission time of the last observed sample.
    pub fn observed_time(&self, t: f64) -> f64 {
        (self.index_at(t) - self.warmup) as f64 * self.dt
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionConfig {
    /// Tick length in seconds.
    pub dt: f64,
    pub reach_threshold: f64,
    pub semantics: PrecedenceSemantics,
    /// Replanning ratio γ.
    pub gamma: f64,
    /// Minimum time between degradation checks that replan.
    pub cooldown: f64,
    /// Amount subtracted from η* per tick; defaults to `dt`.
    pub eta_decrement: Option<f64>,
    /// Hard cap on mission time.
    pub max_time: f64,
    /// Simulated time allowed past `now` within a planning call.
    pub plan_time: f64,
    /// Forecast horizon for the first plan, in seconds.
    pub initial_horizon: f64,
    pub min_horizon: f64,
    /// Longest forecast horizon ever requested, in seconds.
    pub max_horizon: f64,
    /// Horizon margin over the incumbent's completion.
    pub horizon_margin: f64,
    pub degradation_checks: bool,
    pub risk: RiskConfig,
}

impl Default for MissionConfig {
    fn default() -> Self {
        Self {
            dt: 0.5,
            reach_threshold: 0.5,
            semantics: PrecedenceSemantics::StartCompletion,
            gamma: 0.2,
            cooldown: 5.0,
            eta_decrement: None,
            max_time: 1000.0,
            plan_time: 600.0,
            initial_horizon: 60.0,
            min_horizon: 20.0,
            max_horizon: 60.0,
            horizon_margin: 0.25,
            degradation_checks: true,
            risk: RiskConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplanReason {
    Initial,
    NewTask,
    Degradation,
    Failure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplanEvent {
    pub t: f64,
    pub reason: ReplanReason,
    pub adopted: bool,
    pub eta_before: f64,
    pub eta_after: f64,
    /// Re-evaluated risk of the current plan (degradation checks only).
    pub eta_t: Option<f64>,
    /// `(1+γ)·η*` the re-evaluation was compared against.
    pub threshold: Option<f64>,
    pub candidate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanttEntry {
    pub robot: String,
    pub subtask: String,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub t: f64,
    pub subtask: String,
    pub props: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionReport {
    pub method: Method,
    pub seed: u64,
    /// Completion minus release time per task.
    pub makespans: BTreeMap<String, f64>,
    pub average_makespan: f64,
    pub weighted_makespan: Option<f64>,
    pub end_time: f64,
    pub replan_events: Vec<ReplanEvent>,
    pub gantt: Vec<GanttEntry>,
    pub trace: Vec<TraceEntry>,
    /// Whether each task's own start trace is accepted by its automaton.
    pub satisfied: BTreeMap<String, bool>,
    pub first_solution_s: f64,
    pub convergence_s: f64,
}

/// `φ ∧ F r₁ ∧ F r₂ …` for newly fired rules, in event-id order.
pub fn update_formula(current: &Formula, fired: &[&ReactiveRule]) -> Result<Formula, FormulaError> {
    let mut rules: Vec<&&ReactiveRule> = fired.iter().filter(|r| !r.fired).collect();
    rules.sort_by(|a, b| a.event.cmp(&b.event));
    let mut out = current.clone();
    for r in rules {
        let rep = parse_scltl(&r.response)?.eventually();
        out = if out == Formula::True { rep } else { out.and(rep) };
    }
    Ok(out)
}

/// Rescales the expected remaining makespan when `just_completed` of the
/// `total - completed` open tasks finish.
pub fn update_eta_on_completion(eta_prev: f64, total: usize, completed: usize, just_completed: usize) -> f64 {
    assert!(total > completed, "no open tasks left to complete");
    let open = (total - completed) as f64;
    (open + just_completed as f64) / open * eta_prev
}

pub fn weighted_makespan(makespans: &BTreeMap<String, f64>, priorities: &BTreeMap<String, f64>) -> f64 {
    makespans.iter().map(|(task, m)| priorities.get(task).copied().unwrap_or(0.0) * m).sum()
}

#[derive(Debug, Clone, PartialEq)]
enum Status {
    Open,
    Running { group: Group, start: f64 },
    Done { start: f64, end: f64 },
}

#[derive(Debug, Clone)]
struct Task {
    spec: TaskSpec,
    release: f64,
    automaton: FiniteAutomaton,
    poset: RPoset,
    completed_at: Option<f64>,
}

/// Everything the mission loop mutates.
pub struct MissionState<'a> {
    pub t: f64,
    pub team: TeamModel,
    pub positions: Vec<Point>,
    pub failed: BTreeSet<usize>,
    pub formula: Formula,
    pub poset: RPoset,
    pub eta_star: f64,
    pub gamma: f64,
    pub completed_tasks: usize,
    tasks: Vec<Task>,
    status: Vec<Status>,
    assigned: BTreeMap<usize, Group>,
    queues: Vec<VecDeque<usize>>,
    plan_order: Vec<(usize, Group)>,
    rules: Vec<ReactiveRule>,
    failures: Vec<FailureEvent>,
    truth: &'a GroundTruth,
    forecaster: &'a Forecaster,
    cfg: MissionConfig,
    method: Method,
    seed: u64,
    plan_calls: u64,
    last_replan: f64,
    horizon: f64,
    bundle_cache: Option<(usize, usize, PredictionBundle)>,
    report: MissionReport,
}

impl<'a> MissionState<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        team: TeamModel,
        tasks: Vec<TaskSpec>,
        rules: Vec<ReactiveRule>,
        failures: Vec<FailureEvent>,
        truth: &'a GroundTruth,
        forecaster: &'a Forecaster,
        cfg: MissionConfig,
        method: Method,
        seed: u64,
    ) -> Result<Self, MissionError> {
        if truth.ids != forecaster.ids {
            return Err(MissionError::Unknown {
                kind: "target ordering",
                name: truth.ids.join(","),
            });
        }
        let positions = team.robots.iter().map(|r| r.position).collect();
        let n = team.robots.len();
        let mut failures = failures;
        failures.sort_by(|a, b| a.at.total_cmp(&b.at));
        let mut s = Self {
            t: 0.0,
            team,
            positions,
            failed: BTreeSet::new(),
            formula: Formula::True,
            poset: RPoset::empty(),
            eta_star: 0.0,
            gamma: cfg.gamma,
            completed_tasks: 0,
            tasks: Vec::new(),
            status: Vec::new(),
            assigned: BTreeMap::new(),
            queues: vec![VecDeque::new(); n],
            plan_order: Vec::new(),
            rules,
            failures,
            truth,
            forecaster,
            horizon: cfg.initial_horizon,
            cfg,
            method,
            seed,
            plan_calls: 0,
            last_replan: 0.0,
            bundle_cache: None,
            report: MissionReport {
                method,
                seed,
                makespans: BTreeMap::new(),
                average_makespan: 0.0,
                weighted_makespan: None,
                end_time: 0.0,
                replan_events: Vec::new(),
                gantt: Vec::new(),
                trace: Vec::new(),
                satisfied: BTreeMap::new(),
                first_solution_s: 0.0,
                convergence_s: 0.0,
            },
        };
        for task in tasks {
            s.release(task)?;
        }
        Ok(s)
    }

    fn release(&mut self, spec: TaskSpec) -> Result<(), MissionError> {
        let automaton = to_automaton(&spec.formula)?;
        let poset = compute_poset(&automaton).map_err(|source| MissionError::Poset {
            task: spec.name.clone(),
            source,
        })?;
        self.formula = if self.formula == Formula::True {
            spec.formula.clone()
        } else {
            self.formula.clone().and(spec.formula.clone())
        };
        let empty = poset.is_empty();
        self.tasks.push(Task {
            spec,
            release: self.t,
            automaton,
            poset,
            completed_at: None,
        });
        self.poset = RPoset::disjoint_union(
            self.tasks
                .iter()
                .map(|t| (t.spec.name.clone(), t.poset.clone()))
                .collect(),
        );
        self.status.resize(self.poset.len(), Status::Open);
        if empty {
            self.complete_task(self.tasks.len() - 1);
        }
        Ok(())
    }

    fn complete_task(&mut self, l: usize) {
        let task = &mut self.tasks[l];
        task.completed_at = Some(self.t);
        self.report
            .makespans
            .insert(task.spec.name.clone(), self.t - task.release);
        self.completed_tasks += 1;
    }

    fn target_index(&self, w: usize) -> usize {
        let id = &self.poset.subtasks[w].target;
        self.truth.ids.iter().position(|t| t == id).expect("targets are validated")
    }

    fn duration(&self, w: usize) -> f64 {
        self.poset.subtasks[w]
            .collab
            .as_ref()
            .and_then(|c| self.team.collaboration(c))
            .map_or(0.0, |c| c.duration)
    }

    fn planning_state(&self) -> PlanningState {
        let mut robots: Vec<RobotState> = self
            .positions
            .iter()
            .enumerate()
            .map(|(i, &p)| RobotState {
                position: p,
                ready_at: self.t,
                failed: self.failed.contains(&i),
            })
            .collect();
        let mut completed = BTreeSet::new();
        let mut in_progress = Vec::new();
        for (w, s) in self.status.iter().enumerate() {
            match s {
                Status::Done { .. } => {
                    completed.insert(w);
                }
                Status::Running { group, start } => {
                    for &r in &group.robots {
                        robots[r].ready_at = start + self.duration(w);
                    }
                    in_progress.push(Pinned {
                        subtask: w,
                        group: group.clone(),
                        start: *start,
                    });
                }
                Status::Open => {}
            }
        }
        let weights = self.tasks.iter().any(|t| t.spec.priority.is_some()).then(|| {
            self.tasks
                .iter()
                .map(|t| t.spec.priority.unwrap_or(1.0 / self.tasks.len() as f64))
                .collect()
        });
        PlanningState {
            now: self.t,
            robots,
            completed,
            in_progress,
            weights,
        }
    }

    fn sim_params(&self) -> SimParams {
        SimParams {
            dt: self.cfg.dt,
            reach_threshold: self.cfg.reach_threshold,
            max_time: self.cfg.plan_time,
            semantics: self.cfg.semantics,
        }
    }

    fn horizon_steps(&self) -> usize {
        let k = self.truth.index_at(self.t);
        let steps = (self.horizon.max(self.cfg.min_horizon) / self.truth.dt).ceil() as usize;
        let cap = (self.cfg.max_horizon / self.truth.dt + 1e-9).floor() as usize;
        let steps = (steps.div_ceil(10) * 10).min(cap);
        steps.min(self.forecaster.max_horizon(k)).max(1)
    }

    /// Forecast bundle as seen by the configured method.
    pub fn bundle(&mut self) -> Result<PredictionBundle, MissionError> {
        let k = self.truth.index_at(self.t);
        let h = self.horizon_steps();
        if let Some((ck, ch, b)) = &self.bundle_cache {
            if *ck == k && *ch == h {
                return Ok(b.clone());
            }
        }
        let t0 = self.truth.observed_time(self.t);
        let histories: Vec<&[Point]> = (0..self.truth.ids.len()).map(|m| self.truth.history(m, self.t)).collect();
        let b = match self.method {
            Method::Cs => PredictionBundle {
                t0,
                dt: self.truth.dt,
                delta: self.forecaster.delta,
                targets: (0..self.truth.ids.len())
                    .map(|m| {
                        let path = self.truth.path(m);
                        TargetForecast {
                            id: self.truth.ids[m].clone(),
                            origin: path.at(t0),
                            yhat: (1..=h).map(|j| path.at(t0 + j as f64 * self.truth.dt)).collect(),
                            radii: vec![0.0; h],
                            vmax: max_speed(histories[m], self.truth.dt),
                        }
                    })
                    .collect(),
            },
            _ => {
                let b = self.forecaster.forecast(&histories, t0, h)?;
                match self.method {
                    Method::Ntp => b.frozen(),
                    Method::Nu => b.without_uncertainty(),
                    _ => b,
                }
            }
        };
        self.bundle_cache = Some((k, h, b.clone()));
        Ok(b)
    }

    fn risk(&self) -> RiskConfig {
        let mut r = self.cfg.risk.clone();
        r.seed = self
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(self.plan_calls.wrapping_mul(0xBF58_476D_1CE4_E5B9));
        if self.method == Method::Nu {
            r.use_uncertainty = false;
        }
        r
    }

    fn open_count(&self) -> usize {
        self.status.iter().filter(|s| **s == Status::Open).count()
    }

    /// Runs the planner from the current state; returns `(order, cvar, horizon)`.
    fn plan(&mut self) -> Result<(Vec<(usize, Group)>, f64), MissionError> {
        let bundle = self.bundle()?;
        let state = self.planning_state();
        let risk = self.risk();
        self.plan_calls += 1;
        let poset = self.poset.clone();
        let prob = Problem::new(&self.team, &poset, &state, self.sim_params(), &self.truth.ids)?;
        let out = cp_mcts(&prob, &bundle, &risk)?;
        if self.plan_calls == 1 {
            self.report.first_solution_s = out.stats.first_solution_s;
            self.report.convergence_s = out.stats.convergence_s;
        }
        let last = out
            .plan
            .subtasks
            .iter()
            .map(|s| s.completion)
            .filter(|c| c.is_finite())
            .fold(self.t, f64::max);
        self.horizon = (last - self.t) * (1.0 + self.cfg.horizon_margin);
        Ok((out.plan.order, out.plan.cvar))
    }

    fn adopt(&mut self, order: Vec<(usize, Group)>) {
        self.assigned.clear();
        for q in &mut self.queues {
            q.clear();
        }
        for (w, s) in self.status.iter().enumerate() {
            if let Status::Running { group, .. } = s {
                for &r in &group.robots {
                    self.queues[r].push_back(w);
                }
            }
        }
        for (w, g) in &order {
            for &r in &g.robots {
                self.queues[r].push_back(*w);
            }
            self.assigned.insert(*w, g.clone());
        }
        self.plan_order = order;
    }

    fn replan(&mut self, reason: ReplanReason) -> Result<(), MissionError> {
        let before = self.eta_star;
        if self.open_count() == 0 {
            return Ok(());
        }
        let (order, cvar) = self.plan()?;
        self.adopt(order);
        self.eta_star = cvar;
        self.last_replan = self.t;
        self.report.replan_events.push(ReplanEvent {
            t: self.t,
            reason,
            adopted: true,
            eta_before: before,
            eta_after: cvar,
            eta_t: None,
            threshold: None,
            candidate: Some(cvar),
        });
        Ok(())
    }

    /// Marks `robot` failed; its running subtask returns to the open pool.
    /// Returns whether the robot held any work, in which case the caller
    /// must replan.
    pub fn handle_failure(&mut self, robot: usize) -> bool {
        if !self.failed.insert(robot) {
            return false;
        }
        let mut held = !self.queues[robot].is_empty();
        for w in 0..self.status.len() {
            if let Status::Running { group, .. } = &self.status[w] {
                if group.contains(robot) {
                    let name = &self.poset.subtasks[w].name;
                    self.report.trace.retain(|e| &e.subtask != name);
                    self.report.gantt.retain(|g| &g.subtask != name);
                    self.status[w] = Status::Open;
                    held = true;
                }
            }
        }
        self.queues[robot].clear();
        held
    }

    fn step_world(&mut self) {
        let t1 = self.t + self.cfg.dt;
        for r in 0..self.team.robots.len() {
            if self.failed.contains(&r) {
                continue;
            }
            let Some(&w) = self.queues[r].front() else {
                continue;
            };
            let goal = self.truth.position(self.target_index(w), t1);
            self.positions[r] = step_toward(self.positions[r], goal, self.team.robots[r].vmax * self.cfg.dt);
        }
        self.t = t1;
    }

    fn predecessors_allow(&self, w: usize) -> bool {
        self.poset.predecessors(w).all(|v| match (&self.status[v], self.cfg.semantics) {
            (Status::Done { .. }, _) => true,
            (Status::Running { .. }, PrecedenceSemantics::StartStart) => true,
            _ => false,
        })
    }

    /// Completes finished subtasks and starts ready ones; returns the
    /// number of tasks finished this tick.
    fn progress(&mut self) -> usize {
        let mut finished_tasks = 0;
        for _ in 0..2 {
            for w in 0..self.status.len() {
                if let Status::Running { group, start } = self.status[w].clone() {
                    if self.t >= start + self.duration(w) - 1e-9 {
                        self.status[w] = Status::Done { start, end: self.t };
                        for &r in &group.robots {
                            if self.queues[r].front() == Some(&w) {
                                self.queues[r].pop_front();
                            }
                            self.report.gantt.push(GanttEntry {
                                robot: self.team.robots[r].id.clone(),
                                subtask: self.poset.subtasks[w].name.clone(),
                                start,
                                end: self.t,
                            });
                        }
                    }
                }
            }
            for l in 0..self.tasks.len() {
                if self.tasks[l].completed_at.is_none()
                    && self
                        .poset
                        .subtasks
                        .iter()
                        .enumerate()
                        .filter(|(_, s)| s.task == l)
                        .all(|(w, _)| matches!(self.status[w], Status::Done { .. }))
                {
                    self.complete_task(l);
                    finished_tasks += 1;
                }
            }
            let order: Vec<usize> = self.plan_order.iter().map(|(w, _)| *w).collect();
            for w in order {
                if self.status[w] != Status::Open {
                    continue;
                }
                let Some(group) = self.assigned.get(&w).cloned() else {
                    continue;
                };
                let m = self.target_index(w);
                let at = self.truth.position(m, self.t);
                let ready = group.robots.iter().all(|&r| {
                    !self.failed.contains(&r)
                        && self.queues[r].front() == Some(&w)
                        && dist(self.positions[r], at) <= self.cfg.reach_threshold + 1e-9
                });
                let free = self
                    .poset
                    .excluded_with(w)
                    .iter()
                    .all(|&e| !matches!(self.status[e], Status::Running { .. }));
                if ready && free && self.predecessors_allow(w) {
                    self.status[w] = Status::Running {
                        group,
                        start: self.t,
                    };
                    let st = &self.poset.subtasks[w];
                    self.report.trace.push(TraceEntry {
                        t: self.t,
                        subtask: st.name.clone(),
                        props: st.label.iter().map(|p| p.to_string()).collect(),
                    });
                }
            }
        }
        finished_tasks
    }

    fn fire_rules(&mut self) -> Result<Vec<TaskSpec>, MissionError> {
        let mut fired = Vec::new();
        for i in 0..self.rules.len() {
            if self.rules[i].fired {
                continue;
            }
            let hit = match &self.rules[i].trigger {
                Trigger::Time { at } => self.t >= at - 1e-9,
                Trigger::Proximity { target, radius, robot } => {
                    let m = self.truth.ids.iter().position(|x| x == target).ok_or_else(|| {
                        MissionError::Unknown {
                            kind: "target",
                            name: target.clone(),
                        }
                    })?;
                    let at = self.truth.position(m, self.t);
                    (0..self.team.robots.len()).any(|r| {
                        !self.failed.contains(&r)
                            && robot.as_ref().map_or(true, |id| *id == self.team.robots[r].id)
                            && dist(self.positions[r], at) <= *radius
                    })
                }
            };
            if hit {
                fired.push(i);
            }
        }
        fired.sort_by(|&a, &b| self.rules[a].event.cmp(&self.rules[b].event));
        let mut out = Vec::new();
        for i in fired {
            let r = &mut self.rules[i];
            out.push(TaskSpec {
                name: r.event.clone(),
                formula: parse_scltl(&r.response)?.eventually(),
                priority: r.priority,
            });
            r.fired = true;
        }
        Ok(out)
    }

    fn pending_events(&self) -> bool {
        self.rules
            .iter()
            .any(|r| !r.fired && matches!(r.trigger, Trigger::Time { .. }))
    }

    fn degradation_check(&mut self) -> Result<(), MissionError> {
        if !self.cfg.degradation_checks
            || self.t - self.last_replan < self.cfg.cooldown - 1e-9
            || self.open_count() == 0
        {
            return Ok(());
        }
        let bundle = self.bundle()?;
        let state = self.planning_state();
        let remaining: Vec<(usize, Group)> = self
            .plan_order
            .iter()
            .filter(|(w, _)| self.status[*w] == Status::Open)
            .cloned()
            .collect();
        let risk = self.risk();
        let poset = self.poset.clone();
        let prob = Problem::new(&self.team, &poset, &state, self.sim_params(), &self.truth.ids)?;
        let eta_t = evaluate_order(&prob, &bundle, &remaining, &risk).cvar;
        let threshold = (1.0 + self.gamma) * self.eta_star;
        if eta_t <= threshold {
            return Ok(());
        }
        let before = self.eta_star;
        let (order, cand) = self.plan()?;
        let adopted = cand < eta_t;
        if adopted {
            self.adopt(order);
            self.eta_star = cand;
        }
        self.last_replan = self.t;
        self.report.replan_events.push(ReplanEvent {
            t: self.t,
            reason: ReplanReason::Degradation,
            adopted,
            eta_before: before,
            eta_after: self.eta_star,
            eta_t: Some(eta_t),
            threshold: Some(threshold),
            candidate: Some(cand),
        });
        Ok(())
    }

    fn finish(mut self) -> MissionReport {
        let n = self.report.makespans.len().max(1) as f64;
        self.report.average_makespan = self.report.makespans.values().sum::<f64>() / n;
        if self.tasks.iter().any(|t| t.spec.priority.is_some()) {
            let pri: BTreeMap<String, f64> = self
                .tasks
                .iter()
                .map(|t| (t.spec.name.clone(), t.spec.priority.unwrap_or(1.0 / self.tasks.len() as f64)))
                .collect();
            self.report.weighted_makespan = Some(weighted_makespan(&self.report.makespans, &pri));
        }
        for (l, task) in self.tasks.iter().enumerate() {
            let mut starts: Vec<(f64, usize)> = self
                .status
                .iter()
                .enumerate()
                .filter(|(w, _)| self.poset.subtasks[*w].task == l)
                .filter_map(|(w, s)| match s {
                    Status::Done { start, .. } => Some((*start, w)),
                    _ => None,
                })
                .collect();
            starts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let trace: Vec<Letter> = starts
                .iter()
                .map(|&(_, w)| self.poset.subtasks[w].label.clone())
                .collect();
            self.report
                .satisfied
                .insert(task.spec.name.clone(), task.automaton.accepts(&trace));
        }
        self.report.end_time = self.t;
        self.report
    }

    /// The plan the mission would adopt at time zero, without executing it.
    pub fn initial_plan(mut self) -> Result<PlanOutcome, MissionError> {
        for spec in self.fire_rules()? {
            self.release(spec)?;
        }
        let bundle = self.bundle()?;
        let state = self.planning_state();
        let risk = self.risk();
        let poset = self.poset.clone();
        let prob = Problem::new(&self.team, &poset, &state, self.sim_params(), &self.truth.ids)?;
        Ok(cp_mcts(&prob, &bundle, &risk)?)
    }

    /// Runs the receding-horizon loop to completion.
    pub fn run(mut self) -> Result<MissionReport, MissionError> {
        let initial = self.fire_rules()?;
        for spec in initial {
            self.release(spec)?;
        }
        self.replan(ReplanReason::Initial)?;
        self.progress();
        let mut tick: u64 = 0;
        loop {
            if self.completed_tasks == self.tasks.len() && !self.pending_events() {
                break;
            }
            if self.t > self.cfg.max_time {
                return Err(MissionError::Timeout(self.cfg.max_time));
            }
            self.step_world();
            tick += 1;
            self.t = tick as f64 * self.cfg.dt;
            let done_before = self.completed_tasks;
            let just_done = self.progress();

            let mut failed_now = false;
            while self.failures.first().is_some_and(|f| f.at <= self.t + 1e-9) {
                let f = self.failures.remove(0);
                let r = self.team.robot_index(&f.robot).ok_or_else(|| MissionError::Unknown {
                    kind: "robot",
                    name: f.robot.clone(),
                })?;
                failed_now |= self.handle_failure(r);
            }
            let released = self.fire_rules()?;
            let new_tasks = !released.is_empty();
            for spec in released {
                self.release(spec)?;
            }

            if new_tasks {
                self.replan(ReplanReason::NewTask)?;
            } else if failed_now {
                self.replan(ReplanReason::Failure)?;
            } else {
                let dec = self.cfg.eta_decrement.unwrap_or(self.cfg.dt);
                self.eta_star = (self.eta_star - dec).max(0.0);
                if just_done > 0 && self.tasks.len() > done_before {
                    self.eta_star =
                        update_eta_on_completion(self.eta_star, self.tasks.len(), done_before, just_done);
                }
                self.degradation_check()?;
            }
            self.progress();
        }
        Ok(self.finish())
    }
}

/// Convenience wrapper around [`MissionState::new`] and [`MissionState::run`].
#[allow(clippy::too_many_arguments)]
pub fn run_mission(
    team: &TeamModel,
    tasks: Vec<TaskSpec>,
    rules: Vec<ReactiveRule>,
    failures: Vec<FailureEvent>,
    truth: &GroundTruth,
    forecaster: &Forecaster,
    cfg: &MissionConfig,
    method: Method,
    seed: u64,
) -> Result<MissionReport, MissionError> {
    MissionState::new(
        team.clone(),
        tasks,
        rules,
        failures,
        truth,
        forecaster,
        cfg.clone(),
        method,
        seed,
    )?
    .run()
}
