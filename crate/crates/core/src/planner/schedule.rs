//! Stepwise simulation of subtask assignments against target trajectories.
//!
//! Robots execute their queues strictly in order. Between subtasks a robot
//! pursues the target in straight-line steps of `vmax·Δt` toward where the
//! target will be at the end of the step; the final partial step is
//! interpolated, so arrival at a static target is exact. A subtask starts
//! once every group member is engaged, its predecessors allow it and no
//! exclusive subtask assigned earlier is still running.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::geom::{dist, step_toward, Point, TargetPath};
use crate::poset::{PrecedenceSemantics, RPoset};

use super::team::{Group, TeamModel};
use super::PlanError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    /// Simulation step in seconds.
    pub dt: f64,
    /// Distance at which a robot counts as reaching a target, in meters.
    pub reach_threshold: f64,
    /// Simulated time allowed past `now` before giving up, in seconds.
    pub max_time: f64,
    pub semantics: PrecedenceSemantics,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            dt: 0.5,
            reach_threshold: 0.5,
            max_time: 600.0,
            semantics: PrecedenceSemantics::StartCompletion,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub position: Point,
    /// Earliest time the robot can leave for a new subtask.
    pub ready_at: f64,
    pub failed: bool,
}

/// A subtask already running; its group and start are fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pinned {
    pub subtask: usize,
    pub group: Group,
    pub start: f64,
}

/// World snapshot a planning call starts from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanningState {
    pub now: f64,
    pub robots: Vec<RobotState>,
    pub completed: BTreeSet<usize>,
    pub in_progress: Vec<Pinned>,
    /// Per-task objective weights; `None` averages over open tasks.
    pub weights: Option<Vec<f64>>,
}

impl PlanningState {
    pub fn initial(team: &TeamModel) -> Self {
        Self {
            now: 0.0,
            robots: team
                .robots
                .iter()
                .map(|r| RobotState {
                    position: r.position,
                    ready_at: 0.0,
                    failed: false,
                })
                .collect(),
            completed: BTreeSet::new(),
            in_progress: Vec::new(),
            weights: None,
        }
    }
}

/// All feasible groups for `subtask`: one distinct live robot per action of
/// its collaboration, covering every robot its label names. Role
/// assignments over the same robot set are merged, keeping the first.
pub fn enumerate_groups(
    team: &TeamModel,
    poset: &RPoset,
    subtask: usize,
    alive: &[bool],
) -> Result<Vec<Group>, PlanError> {
    let s = &poset.subtasks[subtask];
    let mut named = Vec::new();
    for r in &s.robots {
        let i = team
            .robot_index(r)
            .ok_or_else(|| PlanError::Unknown { kind: "robot", name: r.clone() })?;
        named.push(i);
    }
    let Some(cid) = &s.collab else {
        if named.iter().any(|&i| !alive[i]) {
            return Ok(Vec::new());
        }
        let mut robots = named;
        robots.sort_unstable();
        let actions = vec![None; robots.len()];
        return Ok(vec![Group { robots, actions }]);
    };
    let c = team
        .collaboration(cid)
        .ok_or_else(|| PlanError::Unknown { kind: "collaboration", name: cid.clone() })?;
    let mut out: Vec<Group> = Vec::new();
    let mut seen = BTreeSet::new();
    let mut roles: Vec<usize> = Vec::with_capacity(c.actions.len());
    fn rec(
        team: &TeamModel,
        actions: &[String],
        alive: &[bool],
        named: &[usize],
        roles: &mut Vec<usize>,
        seen: &mut BTreeSet<Vec<usize>>,
        out: &mut Vec<Group>,
    ) {
        if roles.len() == actions.len() {
            if !named.iter().all(|n| roles.contains(n)) {
                return;
            }
            let mut pairs: Vec<(usize, Option<String>)> =
                roles.iter().zip(actions).map(|(&r, a)| (r, Some(a.clone()))).collect();
            pairs.sort_by_key(|p| p.0);
            let robots: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            if seen.insert(robots.clone()) {
                out.push(Group {
                    robots,
                    actions: pairs.into_iter().map(|p| p.1).collect(),
                });
            }
            return;
        }
        let action = &actions[roles.len()];
        for (i, r) in team.robots.iter().enumerate() {
            if alive[i] && !roles.contains(&i) && r.capabilities.contains(action) {
                roles.push(i);
                rec(team, actions, alive, named, roles, seen, out);
                roles.pop();
            }
        }
    }
    rec(team, &c.actions, alive, &named, &mut roles, &mut seen, &mut out);
    Ok(out)
}

/// Static data shared by every node of one planning call.
#[derive(Debug, Clone)]
pub struct Problem<'a> {
    pub team: &'a TeamModel,
    pub poset: &'a RPoset,
    pub state: &'a PlanningState,
    pub params: SimParams,
    /// Bundle index of each subtask's target.
    pub target_of: Vec<usize>,
    pub duration: Vec<f64>,
    pub groups: Vec<Vec<Group>>,
    pub preds: Vec<Vec<usize>>,
    pub exclusive: Vec<Vec<usize>>,
}

impl<'a> Problem<'a> {
    /// `targets` lists target ids in the order trajectories will be supplied.
    pub fn new(
        team: &'a TeamModel,
        poset: &'a RPoset,
        state: &'a PlanningState,
        params: SimParams,
        targets: &[String],
    ) -> Result<Self, PlanError> {
        if state.robots.len() != team.robots.len() {
            return Err(PlanError::InvalidConfig("robot state does not match team".into()));
        }
        if !(params.dt > 0.0) {
            return Err(PlanError::InvalidConfig("simulation step must be positive".into()));
        }
        let alive: Vec<bool> = state.robots.iter().map(|r| !r.failed).collect();
        let n = poset.len();
        let mut target_of = Vec::with_capacity(n);
        let mut duration = Vec::with_capacity(n);
        let mut groups = Vec::with_capacity(n);
        for (w, s) in poset.subtasks.iter().enumerate() {
            target_of.push(
                targets
                    .iter()
                    .position(|t| *t == s.target)
                    .ok_or_else(|| PlanError::Unknown { kind: "target", name: s.target.clone() })?,
            );
            duration.push(match &s.collab {
                Some(c) => team
                    .collaboration(c)
                    .ok_or_else(|| PlanError::Unknown { kind: "collaboration", name: c.clone() })?
                    .duration,
                None => 0.0,
            });
            groups.push(enumerate_groups(team, poset, w, &alive)?);
        }
        let preds = (0..n).map(|w| poset.predecessors(w).collect()).collect();
        let exclusive = (0..n).map(|w| poset.excluded_with(w).into_iter().collect()).collect();
        Ok(Self {
            team,
            poset,
            state,
            params,
            target_of,
            duration,
            groups,
            preds,
            exclusive,
        })
    }

    pub fn now(&self) -> f64 {
        self.state.now
    }

    pub fn horizon_end(&self) -> f64 {
        self.state.now + self.params.max_time
    }

    /// Subtasks that still need an assignment.
    pub fn open_subtasks(&self) -> Vec<usize> {
        let pinned: BTreeSet<usize> = self.state.in_progress.iter().map(|p| p.subtask).collect();
        (0..self.poset.len())
            .filter(|w| !self.state.completed.contains(w) && !pinned.contains(w))
            .collect()
    }

    /// Smallest speed within a group.
    pub fn group_speed(&self, g: &Group) -> f64 {
        g.robots
            .iter()
            .map(|&r| self.team.robots[r].vmax)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Straight-line pursuit of `path` starting at `(pos, t)`. Returns the
/// engagement time and position, or `None` past `t_cap`.
pub fn pursue(
    mut pos: Point,
    mut t: f64,
    v: f64,
    path: &TargetPath,
    threshold: f64,
    dt: f64,
    t_cap: f64,
) -> Option<(f64, Point)> {
    loop {
        if dist(pos, path.at(t)) <= threshold + 1e-9 {
            return Some((t, pos));
        }
        if t >= t_cap {
            return None;
        }
        let ahead = path.at(t + dt);
        let gap = dist(pos, ahead) - threshold;
        if gap <= v * dt {
            let travel = gap.max(0.0);
            return Some((t + dt * travel / (v * dt), step_toward(pos, ahead, travel)));
        }
        pos = step_toward(pos, ahead, v * dt);
        t += dt;
    }
}

/// Partial assignment with simulated times. Subtasks not yet assigned have
/// `start`/`completion` of `None`; completed ones carry `-∞`.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub robot_pos: Vec<Point>,
    pub robot_free: Vec<f64>,
    pub start: Vec<Option<f64>>,
    pub completion: Vec<Option<f64>>,
    /// Assignments made in this planning call, in order.
    pub order: Vec<(usize, Group)>,
    /// Per-robot queues of subtasks assigned in this call.
    pub queues: Vec<Vec<usize>>,
    /// Set once some subtask could not be reached within the horizon.
    pub overflow: bool,
}

impl Schedule {
    pub fn initial(p: &Problem, paths: &[TargetPath]) -> Self {
        let now = p.now();
        let n = p.poset.len();
        let mut s = Schedule {
            robot_pos: p.state.robots.iter().map(|r| r.position).collect(),
            robot_free: p.state.robots.iter().map(|r| r.ready_at.max(now)).collect(),
            start: vec![None; n],
            completion: vec![None; n],
            order: Vec::new(),
            queues: vec![Vec::new(); p.team.robots.len()],
            overflow: false,
        };
        for &w in &p.state.completed {
            s.start[w] = Some(f64::NEG_INFINITY);
            s.completion[w] = Some(f64::NEG_INFINITY);
        }
        for pin in &p.state.in_progress {
            let done = pin.start + p.duration[pin.subtask];
            s.start[pin.subtask] = Some(pin.start);
            s.completion[pin.subtask] = Some(done);
            let at = paths[p.target_of[pin.subtask]].at(done);
            for &r in &pin.group.robots {
                s.robot_free[r] = s.robot_free[r].max(done);
                s.robot_pos[r] = at;
            }
        }
        s
    }

    pub fn is_assigned(&self, w: usize) -> bool {
        self.completion[w].is_some()
    }

    pub fn is_complete(&self) -> bool {
        self.completion.iter().all(Option::is_some)
    }

    /// Unassigned subtasks whose predecessors are all assigned.
    pub fn available(&self, p: &Problem) -> Vec<usize> {
        (0..p.poset.len())
            .filter(|&w| !self.is_assigned(w) && p.preds[w].iter().all(|&v| self.is_assigned(v)))
            .collect()
    }

    /// Start time `group` would achieve for `w`, without committing.
    pub fn probe(&self, p: &Problem, paths: &[TargetPath], w: usize, group: &Group) -> f64 {
        self.timing(p, paths, w, group).0
    }

    fn timing(&self, p: &Problem, paths: &[TargetPath], w: usize, group: &Group) -> (f64, Vec<Point>) {
        let path = &paths[p.target_of[w]];
        let cap = p.horizon_end();
        let mut start = p.now();
        let mut engaged = Vec::with_capacity(group.robots.len());
        for &r in &group.robots {
            match pursue(
                self.robot_pos[r],
                self.robot_free[r],
                p.team.robots[r].vmax,
                path,
                p.params.reach_threshold,
                p.params.dt,
                cap,
            ) {
                Some((t, pos)) => {
                    start = start.max(t);
                    engaged.push(pos);
                }
                None => return (f64::INFINITY, engaged),
            }
        }
        for &v in &p.preds[w] {
            let bound = match p.params.semantics {
                PrecedenceSemantics::StartCompletion => self.completion[v],
                PrecedenceSemantics::StartStart => self.start[v],
            };
            start = start.max(bound.unwrap_or(f64::INFINITY));
        }
        for &e in &p.exclusive[w] {
            if let Some(c) = self.completion[e] {
                start = start.max(c);
            }
        }
        (start, engaged)
    }

    /// Commits `w` to `group`; returns its completion time (`∞` when some
    /// member cannot engage within the horizon).
    pub fn assign(&mut self, p: &Problem, paths: &[TargetPath], w: usize, group: Group) -> f64 {
        let (start, _) = self.timing(p, paths, w, &group);
        let completion = start + p.duration[w];
        self.start[w] = Some(start);
        self.completion[w] = Some(completion);
        if completion.is_finite() {
            let at = paths[p.target_of[w]].at(completion);
            for &r in &group.robots {
                self.robot_free[r] = completion;
                self.robot_pos[r] = at;
            }
        } else {
            self.overflow = true;
            for &r in &group.robots {
                self.robot_free[r] = f64::INFINITY;
            }
        }
        for &r in &group.robots {
            self.queues[r].push(w);
        }
        self.order.push((w, group));
        completion
    }

    /// Objective over open tasks: mean (or weighted sum) of task completion
    /// minus `now`. Tasks with unassigned subtasks count from the latest
    /// known completion; infinite completions are capped at the horizon.
    pub fn objective(&self, p: &Problem) -> f64 {
        let now = p.now();
        let cap = p.params.max_time;
        let ntasks = p.poset.tasks.len().max(1);
        let mut finish = vec![f64::NEG_INFINITY; ntasks];
        let mut open = vec![false; ntasks];
        for (w, s) in p.poset.subtasks.iter().enumerate() {
            if p.state.completed.contains(&w) {
                continue;
            }
            open[s.task] = true;
            if let Some(c) = self.completion[w] {
                finish[s.task] = finish[s.task].max(c);
            }
        }
        let span = |l: usize| (finish[l] - now).clamp(0.0, cap);
        match &p.state.weights {
            Some(wts) => (0..ntasks).filter(|&l| open[l]).map(|l| wts[l] * span(l)).sum(),
            None => {
                let live: Vec<usize> = (0..ntasks).filter(|&l| open[l]).collect();
                if live.is_empty() {
                    0.0
                } else {
                    live.iter().map(|&l| span(l)).sum::<f64>() / live.len() as f64
                }
            }
        }
    }

    /// Completion time of each task (`None` for tasks already finished).
    pub fn task_completions(&self, p: &Problem) -> Vec<Option<f64>> {
        let mut out: Vec<Option<f64>> = vec![None; p.poset.tasks.len()];
        for (w, s) in p.poset.subtasks.iter().enumerate() {
            if p.state.completed.contains(&w) {
                continue;
            }
            let c = self.completion[w].unwrap_or(f64::INFINITY);
            out[s.task] = Some(out[s.task].map_or(c, |x: f64| x.max(c)));
        }
        out
    }
}

/// Replays `order` from the initial state on the given target paths.
pub fn stepwise_simulate(
    p: &Problem,
    paths: &[TargetPath],
    order: &[(usize, Group)],
) -> Result<Schedule, PlanError> {
    let mut s = Schedule::initial(p, paths);
    for (w, g) in order {
        if !s.assign(p, paths, *w, g.clone()).is_finite() {
            return Err(PlanError::HorizonExceeded { limit: p.params.max_time });
        }
    }
    Ok(s)
}

/// Like [`stepwise_simulate`], but keeps going with infinite completions.
pub fn simulate_capped(p: &Problem, paths: &[TargetPath], order: &[(usize, Group)]) -> Schedule {
    let mut s = Schedule::initial(p, paths);
    for (w, g) in order {
        s.assign(p, paths, *w, g.clone());
    }
    s
}
