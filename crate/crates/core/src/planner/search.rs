use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geom::TargetPath;
use crate::prediction::PredictionBundle;

use super::schedule::{simulate_capped, Problem, Schedule};
use super::team::Group;
use super::PlanError;

#[derive(Debug, Clone)]
pub struct SearchNode {
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub schedule: Schedule,
    pub visits: u64,
    pub value_sum: f64,
    pub zeta: f64,
    pub expanded: bool,
    /// Every descendant has been evaluated; nothing left to explore below.
    pub exhausted: bool,
}

impl SearchNode {
    pub fn new(parent: Option<usize>, schedule: Schedule, zeta: f64) -> Self {
        Self {
            parent,
            children: Vec::new(),
            schedule,
            visits: 0,
            value_sum: 0.0,
            zeta,
            expanded: false,
            exhausted: false,
        }
    }

    pub fn mean_value(&self) -> f64 {
        if self.visits == 0 {
            0.0
        } else {
            self.value_sum / self.visits as f64
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Tree {
    pub nodes: Vec<SearchNode>,
}

impl Tree {
    pub fn with_root(schedule: Schedule) -> Self {
        Self {
            nodes: vec![SearchNode::new(None, schedule, 0.0)],
        }
    }

    pub fn add_child(&mut self, parent: usize, schedule: Schedule, zeta: f64) -> usize {
        let id = self.nodes.len();
        self.nodes.push(SearchNode::new(Some(parent), schedule, zeta));
        self.nodes[parent].children.push(id);
        id
    }

    /// Marks `node` exhausted and propagates to ancestors whose children
    /// are all exhausted.
    pub fn mark_exhausted(&mut self, node: usize) {
        let mut cur = Some(node);
        while let Some(n) = cur {
            self.nodes[n].exhausted = true;
            cur = self.nodes[n].parent.filter(|&p| {
                self.nodes[p].expanded && self.nodes[p].children.iter().all(|&c| self.nodes[c].exhausted)
            });
        }
    }
}

pub fn uct(child: &SearchNode, parent_visits: u64, q: f64) -> f64 {
    if child.visits == 0 {
        return f64::INFINITY;
    }
    child.mean_value() + q * ((parent_visits.max(1) as f64).ln() / child.visits as f64).sqrt()
}

/// Descends from `root` by UCT over non-exhausted children, stopping at the
/// first node that is unexpanded or complete. Returns `None` when the whole
/// tree is exhausted.
pub fn select(tree: &Tree, root: usize, q: f64) -> Option<usize> {
    let mut cur = root;
    loop {
        let node = &tree.nodes[cur];
        if node.exhausted {
            return None;
        }
        if !node.expanded || node.schedule.is_complete() {
            return Some(cur);
        }
        let mut best: Option<(usize, f64)> = None;
        for &c in &node.children {
            if tree.nodes[c].exhausted {
                continue;
            }
            let u = uct(&tree.nodes[c], node.visits, q);
            if best.map_or(true, |(_, b)| u > b) {
                best = Some((c, u));
            }
        }
        cur = best?.0;
    }
}

/// Visits and value are added on the path from `node` up to the root.
pub fn backpropagate(tree: &mut Tree, node: usize, xi: f64) -> usize {
    let mut cur = Some(node);
    let mut touched = 0;
    while let Some(n) = cur {
        tree.nodes[n].visits += 1;
        tree.nodes[n].value_sum += xi;
        touched += 1;
        cur = tree.nodes[n].parent;
    }
    touched
}

/// Normalized reward `2 − η/η*`, clamped to `[-1, 1]`.
pub fn reward(eta: f64, eta_best: f64) -> f64 {
    if !(eta_best > 0.0) || !eta_best.is_finite() {
        return if eta <= eta_best { 1.0 } else { -1.0 };
    }
    (2.0 - eta / eta_best).clamp(-1.0, 1.0)
}

/// Subtasks first in some robot's queue and queued later by no robot.
pub fn key_subtasks(s: &Schedule) -> Vec<usize> {
    let mut out: Vec<usize> = s
        .queues
        .iter()
        .filter_map(|q| q.first().copied())
        .filter(|&w| !s.queues.iter().any(|q| q.iter().skip(1).any(|&v| v == w)))
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Extra time a key subtask may need when the target ends up anywhere in
/// its prediction region: `G / (min v − v*)`, infinite when the group is not
/// faster than the target.
pub fn uncertainty_margin(p: &Problem, bundle: &PredictionBundle, s: &Schedule, w: usize) -> f64 {
    let m = p.target_of[w];
    let Some((_, g)) = s.order.iter().find(|(v, _)| *v == w) else {
        return 0.0;
    };
    let excess = p.group_speed(g) - bundle.targets[m].vmax;
    if excess <= 0.0 {
        return f64::INFINITY;
    }
    let t = s.completion[w].unwrap_or(f64::INFINITY);
    bundle.radius_at(m, t) / excess
}

/// Whether `g` is too slow to ever catch the target of `w`.
pub fn outpaced(p: &Problem, bundle: &PredictionBundle, w: usize, g: &Group) -> bool {
    p.group_speed(g) <= bundle.targets[p.target_of[w]].vmax
}

/// Uncertainty-adjusted average predicted completion time of the subtasks
/// assigned in this call.
pub fn zeta(p: &Problem, bundle: &PredictionBundle, s: &Schedule, use_uncertainty: bool) -> f64 {
    if s.order.is_empty() {
        return 0.0;
    }
    let now = p.now();
    let mut total = 0.0;
    for (w, g) in &s.order {
        let c = s.completion[*w].unwrap_or(f64::INFINITY);
        if !c.is_finite() || outpaced(p, bundle, *w, g) {
            return f64::INFINITY;
        }
        total += c - now;
    }
    for w in key_subtasks(s) {
        let e = uncertainty_margin(p, bundle, s, w);
        if !e.is_finite() {
            return f64::INFINITY;
        }
        if use_uncertainty {
            total += e;
        }
    }
    total / s.order.len() as f64
}

/// One candidate child produced by expansion.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub subtask: usize,
    pub group: usize,
    pub start: f64,
    pub zeta: f64,
    pub schedule: Schedule,
}

/// Every `(available subtask, group)` extension of `s`, in enumeration
/// order, including those with infinite ζ.
pub fn expand(
    p: &Problem,
    bundle: &PredictionBundle,
    paths: &[TargetPath],
    s: &Schedule,
    use_uncertainty: bool,
) -> Vec<Candidate> {
    let mut out = Vec::new();
    for w in s.available(p) {
        for (gi, g) in p.groups[w].iter().enumerate() {
            let mut child = s.clone();
            child.assign(p, paths, w, g.clone());
            let start = child.start[w].unwrap_or(f64::INFINITY);
            let z = zeta(p, bundle, &child, use_uncertainty);
            out.push(Candidate {
                subtask: w,
                group: gi,
                start,
                zeta: z,
                schedule: child,
            });
        }
    }
    out
}

/// Completes `s` by repeatedly picking a uniformly random available subtask
/// and, with probability `epsilon`, a uniformly random feasible group, or
/// otherwise the group that starts it earliest.
pub fn rollout<R: Rng + ?Sized>(
    p: &Problem,
    bundle: &PredictionBundle,
    paths: &[TargetPath],
    mut s: Schedule,
    epsilon: f64,
    rng: &mut R,
) -> Result<Schedule, PlanError> {
    loop {
        let avail = s.available(p);
        let Some(&w) = avail.choose(rng) else {
            return Ok(s);
        };
        let feasible: Vec<(usize, f64)> = p.groups[w]
            .iter()
            .enumerate()
            .filter(|(_, g)| !outpaced(p, bundle, w, g))
            .map(|(i, g)| (i, s.probe(p, paths, w, g)))
            .filter(|(_, t)| t.is_finite())
            .collect();
        if feasible.is_empty() {
            return Err(PlanError::Deadlock {
                subtask: p.poset.subtasks[w].name.clone(),
            });
        }
        let gi = if rng.gen::<f64>() < epsilon {
            feasible[rng.gen_range(0..feasible.len())].0
        } else {
            feasible
                .iter()
                .fold(feasible[0], |best, &c| if c.1 < best.1 { c } else { best })
                .0
        };
        s.assign(p, paths, w, p.groups[w][gi].clone());
    }
}

/// Risk summary of an assignment across sampled target trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub var: f64,
    pub cvar: f64,
    pub samples: Vec<f64>,
    /// Samples where some subtask could not be reached within the horizon.
    pub capped: usize,
}

/// Empirical value-at-risk and conditional value-at-risk of the upper
/// `alpha` tail: VaR is the `⌈αz⌉`-th largest sample, CVaR the mean of
/// samples at or above it.
pub fn risk_measures(samples: &[f64], alpha: f64) -> (f64, f64) {
    assert!(!samples.is_empty(), "risk measures need samples");
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let k = ((alpha * samples.len() as f64) - 1e-9).ceil().clamp(1.0, samples.len() as f64) as usize;
    let var = sorted[k - 1];
    let tail: Vec<f64> = sorted.iter().copied().filter(|&x| x >= var).collect();
    (var, tail.iter().sum::<f64>() / tail.len() as f64)
}

pub fn eval(
    p: &Problem,
    order: &[(usize, Group)],
    sample_paths: &[Vec<TargetPath>],
    alpha: f64,
) -> Evaluation {
    let mut capped = 0;
    let samples: Vec<f64> = sample_paths
        .iter()
        .map(|paths| {
            let s = simulate_capped(p, paths, order);
            capped += usize::from(s.overflow);
            s.objective(p)
        })
        .collect();
    let (var, cvar) = risk_measures(&samples, alpha);
    Evaluation {
        var,
        cvar,
        samples,
        capped,
    }
}
