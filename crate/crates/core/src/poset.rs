//! Relaxed partially-ordered subtask sets extracted from task automata.
//!
//! A shortest realizable accepting run is chosen, each of its transitions
//! becomes a subtask, and the total order of the run is then relaxed pair by
//! pair as long as every linear extension stays accepted.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::formula::{AtomicProp, FiniteAutomaton, Letter};

/// Posets up to this size are relaxed and can be soundness-checked exhaustively.
pub const EXHAUSTIVE_LIMIT: usize = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PosetError {
    #[error("the automaton accepts no plan-realizable trace")]
    EmptyLanguage,
    #[error("poset has {size} subtasks; exhaustive checks are limited to {limit}")]
    Capacity { size: usize, limit: usize },
}

/// How a precedence pair `(a, b)` constrains execution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecedenceSemantics {
    /// `b` may start only once `a` has completed.
    #[default]
    StartCompletion,
    /// `b` may not start before `a` starts.
    StartStart,
}

fn props_as_strings<S: Serializer>(set: &BTreeSet<AtomicProp>, s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(set.iter().map(|p| p.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Subtask {
    pub id: usize,
    pub name: String,
    /// Index of the task (top-level conjunct) this subtask belongs to.
    pub task: usize,
    #[serde(serialize_with = "props_as_strings")]
    pub label: BTreeSet<AtomicProp>,
    pub target: String,
    pub collab: Option<String>,
    /// Robots named by `reach` literals; they must be part of the group.
    pub robots: BTreeSet<String>,
    #[serde(serialize_with = "props_as_strings")]
    pub forbidden: BTreeSet<AtomicProp>,
}

impl Subtask {
    fn from_guard(id: usize, label: BTreeSet<AtomicProp>, forbidden: BTreeSet<AtomicProp>) -> Self {
        let first = label.iter().next().expect("realizable labels are nonempty");
        let target = first.target().to_string();
        let collab = label.iter().find_map(|p| p.collab_id().map(str::to_string));
        let robots = label.iter().filter_map(|p| p.robot().map(str::to_string)).collect();
        Subtask {
            id,
            name: format!("w{id}"),
            task: 0,
            label,
            target,
            collab,
            robots,
            forbidden,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RPoset {
    pub subtasks: Vec<Subtask>,
    /// Covering pairs `(before, after)` of the precedence order.
    pub precedence: BTreeSet<(usize, usize)>,
    /// Sets of subtasks whose executions may not overlap in time.
    pub exclusion: Vec<BTreeSet<usize>>,
    /// Task names, indexed by `Subtask::task`.
    pub tasks: Vec<String>,
}

/// A label can be executed as one subtask when it names a single target and
/// at most one collaboration.
fn realizable(label: &BTreeSet<AtomicProp>) -> bool {
    let Some(first) = label.iter().next() else {
        return false;
    };
    label.iter().all(|p| p.target() == first.target())
        && label.iter().filter(|p| p.collab_id().is_some()).count() <= 1
}

fn closure(n: usize, pairs: &BTreeSet<(usize, usize)>) -> Vec<Vec<bool>> {
    let mut m = vec![vec![false; n]; n];
    for &(a, b) in pairs {
        m[a][b] = true;
    }
    for k in 0..n {
        for i in 0..n {
            if m[i][k] {
                for j in 0..n {
                    if m[k][j] {
                        m[i][j] = true;
                    }
                }
            }
        }
    }
    m
}

fn reduction(n: usize, pairs: &BTreeSet<(usize, usize)>) -> BTreeSet<(usize, usize)> {
    let c = closure(n, pairs);
    let mut out = BTreeSet::new();
    for i in 0..n {
        for j in 0..n {
            if c[i][j] && !(0..n).any(|k| c[i][k] && c[k][j]) {
                out.insert((i, j));
            }
        }
    }
    out
}

/// Shortest accepting run using only realizable transitions, ties broken by
/// the lexicographic order of visited state ids.
fn shortest_run(a: &FiniteAutomaton) -> Option<Vec<usize>> {
    let mut parent: HashMap<usize, (usize, usize)> = HashMap::new();
    let mut level: Vec<usize> = a.initial.clone();
    level.sort_unstable();
    let mut seen: BTreeSet<usize> = level.iter().copied().collect();
    loop {
        if let Some(&goal) = level.iter().find(|s| a.accepting.contains(s)) {
            let mut run = Vec::new();
            let mut s = goal;
            while let Some(&(prev, t)) = parent.get(&s) {
                run.push(t);
                s = prev;
            }
            run.reverse();
            return Some(run);
        }
        let mut next = Vec::new();
        for &s in &level {
            let mut outs: Vec<(usize, &crate::formula::Guard, usize)> = a
                .transitions
                .iter()
                .enumerate()
                .filter(|(_, t)| t.from == s && realizable(&t.guard.pos))
                .map(|(i, t)| (t.to, &t.guard, i))
                .collect();
            outs.sort();
            for (to, _, ti) in outs {
                if seen.insert(to) {
                    parent.insert(to, (s, ti));
                    next.push(to);
                }
            }
        }
        if next.is_empty() {
            return None;
        }
        level = next;
    }
}

struct Soundness<'a> {
    a: &'a FiniteAutomaton,
    letters: Vec<Letter>,
    preds: Vec<u32>,
    memo: HashMap<(u32, Vec<usize>), bool>,
}

impl Soundness<'_> {
    fn step(&self, states: &[usize], letter: &Letter) -> Vec<usize> {
        let mut next = BTreeSet::new();
        for &s in states {
            for t in self.a.outgoing(s) {
                if t.guard.holds(letter) {
                    next.insert(t.to);
                }
            }
        }
        next.into_iter().collect()
    }

    /// True iff every completion of the placed prefix is accepted.
    fn all_accepted(&mut self, placed: u32, states: Vec<usize>) -> bool {
        let n = self.letters.len();
        if placed.count_ones() as usize == n {
            return states.iter().any(|s| self.a.accepting.contains(s));
        }
        if states.is_empty() {
            return false;
        }
        let key = (placed, states);
        if let Some(&hit) = self.memo.get(&key) {
            return hit;
        }
        let (placed, states) = key;
        let mut ok = true;
        for i in 0..n {
            let bit = 1u32 << i;
            if placed & bit == 0 && self.preds[i] & !placed == 0 {
                let next = self.step(&states, &self.letters[i].clone());
                if !self.all_accepted(placed | bit, next) {
                    ok = false;
                    break;
                }
            }
        }
        self.memo.insert((placed, states), ok);
        ok
    }
}

fn sound_relation(a: &FiniteAutomaton, labels: &[Letter], pairs: &BTreeSet<(usize, usize)>) -> bool {
    let n = labels.len();
    let c = closure(n, pairs);
    if (0..n).any(|i| c[i][i]) {
        return false;
    }
    let preds = (0..n)
        .map(|j| (0..n).filter(|&i| c[i][j]).fold(0u32, |m, i| m | (1 << i)))
        .collect();
    let mut check = Soundness {
        a,
        letters: labels.to_vec(),
        preds,
        memo: HashMap::new(),
    };
    let mut init = a.initial.clone();
    init.sort_unstable();
    check.all_accepted(0, init)
}

/// Extracts an R-poset from a single task's automaton.
pub fn compute_poset(a: &FiniteAutomaton) -> Result<RPoset, PosetError> {
    if a.is_empty() || a.accepting.is_empty() {
        return Err(PosetError::EmptyLanguage);
    }
    let run = shortest_run(a).ok_or(PosetError::EmptyLanguage)?;
    let subtasks: Vec<Subtask> = run
        .iter()
        .enumerate()
        .map(|(id, &ti)| {
            let g = &a.transitions[ti].guard;
            Subtask::from_guard(id, g.pos.clone(), g.neg.clone())
        })
        .collect();
    let n = subtasks.len();

    let mut exclusion = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let clash = |x: &Subtask, y: &Subtask| x.forbidden.intersection(&y.label).next().is_some();
            if clash(&subtasks[i], &subtasks[j]) || clash(&subtasks[j], &subtasks[i]) {
                exclusion.push(BTreeSet::from([i, j]));
            }
        }
    }

    let mut relation: BTreeSet<(usize, usize)> =
        (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    if n <= EXHAUSTIVE_LIMIT {
        let labels: Vec<Letter> = subtasks.iter().map(|s| s.label.clone()).collect();
        let mut order: Vec<(usize, usize)> = relation.iter().copied().collect();
        order.sort_by_key(|&(i, j)| (j - i, i));
        loop {
            let mut changed = false;
            for &(i, j) in &order {
                if !relation.contains(&(i, j)) {
                    continue;
                }
                let implied = (0..n).any(|k| relation.contains(&(i, k)) && relation.contains(&(k, j)));
                if implied {
                    continue;
                }
                let mut candidate = relation.clone();
                candidate.remove(&(i, j));
                if sound_relation(a, &labels, &candidate) {
                    relation = candidate;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
    }

    Ok(RPoset {
        precedence: reduction(n, &relation),
        subtasks,
        exclusion,
        tasks: vec!["task".to_string()],
    })
}

/// Exhaustively checks that every linear extension of the precedence order
/// induces a trace accepted by `a`.
pub fn check_poset_soundness(p: &RPoset, a: &FiniteAutomaton) -> Result<bool, PosetError> {
    let n = p.subtasks.len();
    if n > EXHAUSTIVE_LIMIT {
        return Err(PosetError::Capacity {
            size: n,
            limit: EXHAUSTIVE_LIMIT,
        });
    }
    let labels: Vec<Letter> = p.subtasks.iter().map(|s| s.label.clone()).collect();
    Ok(sound_relation(a, &labels, &p.precedence))
}

/// Unassigned subtasks whose predecessors are all assigned.
pub fn available_subtasks(p: &RPoset, assigned: &BTreeSet<usize>) -> BTreeSet<usize> {
    (0..p.subtasks.len())
        .filter(|w| !assigned.contains(w))
        .filter(|&w| p.predecessors(w).all(|v| assigned.contains(&v)))
        .collect()
}

impl RPoset {
    pub fn empty() -> Self {
        RPoset {
            subtasks: Vec::new(),
            precedence: BTreeSet::new(),
            exclusion: Vec::new(),
            tasks: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.subtasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subtasks.is_empty()
    }

    pub fn predecessors(&self, w: usize) -> impl Iterator<Item = usize> + '_ {
        self.precedence.iter().filter(move |&&(_, b)| b == w).map(|&(a, _)| a)
    }

    /// Subtasks sharing an exclusion set with `w`.
    pub fn excluded_with(&self, w: usize) -> BTreeSet<usize> {
        self.exclusion
            .iter()
            .filter(|set| set.contains(&w))
            .flat_map(|set| set.iter().copied())
            .filter(|&v| v != w)
            .collect()
    }

    /// Ranks consistent with the precedence order (Kahn's algorithm, lowest id first).
    pub fn topological_rank(&self) -> Vec<usize> {
        let n = self.len();
        let mut indeg = vec![0usize; n];
        for &(_, b) in &self.precedence {
            indeg[b] += 1;
        }
        let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut rank = vec![0; n];
        let mut r = 0;
        while let Some(&w) = ready.iter().next() {
            ready.remove(&w);
            rank[w] = r;
            r += 1;
            for &(a, b) in &self.precedence {
                if a == w {
                    indeg[b] -= 1;
                    if indeg[b] == 0 {
                        ready.insert(b);
                    }
                }
            }
        }
        rank
    }

    /// Disjoint union of per-task posets; subtask ids are renumbered and
    /// named `<task>.<k>`.
    pub fn disjoint_union(parts: Vec<(String, RPoset)>) -> RPoset {
        let mut out = RPoset::empty();
        for (task_idx, (task_name, p)) in parts.into_iter().enumerate() {
            let offset = out.subtasks.len();
            for mut s in p.subtasks {
                s.name = format!("{task_name}.{}", s.id);
                s.id += offset;
                s.task = task_idx;
                out.subtasks.push(s);
            }
            out.precedence
                .extend(p.precedence.into_iter().map(|(a, b)| (a + offset, b + offset)));
            out.exclusion.extend(
                p.exclusion
                    .into_iter()
                    .map(|set| set.into_iter().map(|v| v + offset).collect()),
            );
            out.tasks.push(task_name);
        }
        out
    }

    pub fn is_acyclic(&self) -> bool {
        let c = closure(self.len(), &self.precedence);
        (0..self.len()).all(|i| !c[i][i])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::{parse_scltl, to_automaton};

    fn poset_of(text: &str) -> (RPoset, FiniteAutomaton) {
        let a = to_automaton(&parse_scltl(text).unwrap()).unwrap();
        (compute_poset(&a).unwrap(), a)
    }

    fn labels(p: &RPoset) -> Vec<String> {
        p.subtasks
            .iter()
            .map(|s| s.label.iter().map(|l| l.to_string()).collect::<Vec<_>>().join("&"))
            .collect()
    }

    #[test]
    fn eventually_gives_one_subtask() {
        let (p, a) = poset_of("F p(x)");
        assert_eq!(labels(&p), vec!["p(x)"]);
        assert!(p.precedence.is_empty());
        assert!(p.exclusion.is_empty());
        assert!(check_poset_soundness(&p, &a).unwrap());
    }

    #[test]
    fn monitor_film_gives_ordered_exclusive_pair() {
        let (p, a) = poset_of("F (monitor(a) & !film(a) & F film(a))");
        assert_eq!(labels(&p), vec!["monitor(a)", "film(a)"]);
        assert_eq!(p.precedence, BTreeSet::from([(0, 1)]));
        assert_eq!(p.exclusion, vec![BTreeSet::from([0, 1])]);
        assert_eq!(p.subtasks[0].forbidden.len(), 1);
        assert!(check_poset_soundness(&p, &a).unwrap());

        let mut missing = p.clone();
        missing.precedence.clear();
        assert!(!check_poset_soundness(&missing, &a).unwrap());
    }

    #[test]
    fn independent_goals_are_unordered() {
        let (p, a) = poset_of("F p(x) & F q(y)");
        assert_eq!(p.len(), 2);
        assert!(p.precedence.is_empty());
        for order in [[0usize, 1], [1, 0]] {
            let trace: Vec<Letter> = order.iter().map(|&i| p.subtasks[i].label.clone()).collect();
            assert!(a.accepts(&trace));
        }
    }

    #[test]
    fn true_gives_empty_poset() {
        let a = to_automaton(&crate::formula::Formula::True).unwrap();
        let p = compute_poset(&a).unwrap();
        assert!(p.is_empty());
        assert!(check_poset_soundness(&p, &a).unwrap());
    }

    #[test]
    fn empty_language_is_an_error() {
        let a = to_automaton(&parse_scltl("p(x) & !p(x)").unwrap()).unwrap();
        assert_eq!(compute_poset(&a).unwrap_err(), PosetError::EmptyLanguage);
        // only realizable through one letter naming two targets
        let a = to_automaton(&parse_scltl("p(x) & q(y)").unwrap()).unwrap();
        assert_eq!(compute_poset(&a).unwrap_err(), PosetError::EmptyLanguage);
    }

    #[test]
    fn available_follows_precedence() {
        let (p, _) = poset_of("F (monitor(a) & !film(a) & F film(a))");
        assert_eq!(available_subtasks(&p, &BTreeSet::new()), BTreeSet::from([0]));
        assert_eq!(available_subtasks(&p, &BTreeSet::from([0])), BTreeSet::from([1]));

        let (chain, _) = poset_of("F (a(x) & F (b(x) & F c(x)))");
        assert_eq!(chain.len(), 3);
        let closed = closure(3, &chain.precedence);
        let first = (0..3).find(|&i| (0..3).all(|j| !closed[j][i])).unwrap();
        let second = (0..3).find(|&i| closed[first][i] && (0..3).all(|j| j == first || !closed[j][i])).unwrap();
        assert_eq!(
            available_subtasks(&chain, &BTreeSet::from([first])),
            BTreeSet::from([second])
        );
    }

    #[test]
    fn capacity_error_beyond_limit() {
        let text = (0..11).map(|i| format!("F p{i}(x)")).collect::<Vec<_>>().join(" & ");
        let f = parse_scltl(&text).unwrap();
        // Build the poset by hand: the automaton for eleven goals is large.
        let p = RPoset {
            subtasks: f
                .props()
                .into_iter()
                .enumerate()
                .map(|(i, l)| Subtask::from_guard(i, BTreeSet::from([l]), BTreeSet::new()))
                .collect(),
            precedence: BTreeSet::new(),
            exclusion: vec![],
            tasks: vec!["t".into()],
        };
        let a = to_automaton(&parse_scltl("F p0(x)").unwrap()).unwrap();
        assert!(matches!(
            check_poset_soundness(&p, &a),
            Err(PosetError::Capacity { size: 11, .. })
        ));
    }

    #[test]
    fn union_renumbers_and_names() {
        let (p1, _) = poset_of("F (monitor(a) & !film(a) & F film(a))");
        let (p2, _) = poset_of("F patrol(s1)");
        let u = RPoset::disjoint_union(vec![("mf-a".into(), p1), ("p-s1".into(), p2)]);
        assert_eq!(u.len(), 3);
        assert_eq!(u.subtasks[2].name, "p-s1.0");
        assert_eq!(u.subtasks[2].task, 1);
        assert_eq!(u.precedence, BTreeSet::from([(0, 1)]));
        assert_eq!(u.topological_rank()[0], 0);
        assert_eq!(u.excluded_with(1), BTreeSet::from([0]));
        assert!(u.is_acyclic());
    }

    #[test]
    fn json_shape() {
        let (p, _) = poset_of("F (monitor(a) & !film(a) & F film(a))");
        let v = serde_json::to_value(&p).unwrap();
        assert_eq!(v["subtasks"][0]["label"][0], "monitor(a)");
        assert_eq!(v["subtasks"][1]["collab"], "film");
        assert_eq!(v["precedence"][0], serde_json::json!([0, 1]));
        assert_eq!(v["exclusion"][0], serde_json::json!([0, 1]));
    }
}
