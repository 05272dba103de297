//! Finite-trace automata for co-safe formulas.
//!
//! A state is a set of pending obligations (a conjunction of formulas). Each
//! state is expanded into guarded alternatives by unfolding `F`, `U` and `X`
//! one step; the obligation set reached after the last letter must be
//! satisfiable by the empty suffix for the trace to be accepted.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;

use serde::Serialize;

use super::ast::{AtomicProp, Formula};
use super::FormulaError;

/// Default bound on the number of automaton states.
pub const DEFAULT_STATE_LIMIT: usize = 100_000;

/// One letter of a trace: the set of propositions that hold.
pub type Letter = BTreeSet<AtomicProp>;

/// Conjunction of literals. The empty guard is `true`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize)]
pub struct Guard {
    pub pos: BTreeSet<AtomicProp>,
    pub neg: BTreeSet<AtomicProp>,
}

impl Guard {
    pub fn top() -> Self {
        Self::default()
    }

    pub fn is_top(&self) -> bool {
        self.pos.is_empty() && self.neg.is_empty()
    }

    pub fn holds(&self, letter: &Letter) -> bool {
        self.pos.iter().all(|p| letter.contains(p)) && self.neg.iter().all(|p| !letter.contains(p))
    }

    fn merge(&self, other: &Guard) -> Option<Guard> {
        let pos: BTreeSet<_> = self.pos.union(&other.pos).cloned().collect();
        let neg: BTreeSet<_> = self.neg.union(&other.neg).cloned().collect();
        if pos.intersection(&neg).next().is_some() {
            return None;
        }
        Some(Guard { pos, neg })
    }

    fn implies(&self, weaker: &Guard) -> bool {
        weaker.pos.is_subset(&self.pos) && weaker.neg.is_subset(&self.neg)
    }
}

impl fmt::Display for Guard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_top() {
            return write!(f, "true");
        }
        let lits: Vec<String> = self
            .pos
            .iter()
            .map(|p| p.to_string())
            .chain(self.neg.iter().map(|p| format!("!{p}")))
            .collect();
        write!(f, "{}", lits.join(" & "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Transition {
    pub from: usize,
    pub guard: Guard,
    pub to: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct FiniteAutomaton {
    /// Printable obligation set per state.
    pub states: Vec<String>,
    pub transitions: Vec<Transition>,
    pub initial: Vec<usize>,
    pub accepting: BTreeSet<usize>,
    /// Propositions mentioned by any guard.
    pub alphabet: BTreeSet<AtomicProp>,
    #[serde(skip)]
    outgoing: Vec<Vec<usize>>,
}

type Obligations = BTreeSet<Formula>;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct Alt {
    guard: Guard,
    next: Obligations,
}

fn insert_obligation(set: &mut Obligations, f: &Formula) {
    match f {
        Formula::True => {}
        Formula::And(a, b) => {
            insert_obligation(set, a);
            insert_obligation(set, b);
        }
        other => {
            set.insert(other.clone());
        }
    }
}

fn single(f: &Formula) -> Obligations {
    let mut s = Obligations::new();
    insert_obligation(&mut s, f);
    s
}

fn product(xs: &[Alt], ys: &[Alt]) -> Vec<Alt> {
    let mut out = Vec::with_capacity(xs.len() * ys.len());
    for x in xs {
        for y in ys {
            if let Some(guard) = x.guard.merge(&y.guard) {
                let mut next = x.next.clone();
                next.extend(y.next.iter().cloned());
                out.push(Alt { guard, next });
            }
        }
    }
    out
}

/// Drops duplicate alternatives and those implied by a weaker one.
fn prune(mut alts: Vec<Alt>) -> Vec<Alt> {
    alts.sort();
    alts.dedup();
    // After dedup no two alternatives dominate each other.
    let keep: Vec<bool> = (0..alts.len())
        .map(|i| {
            !alts.iter().enumerate().any(|(j, other)| {
                j != i && alts[i].guard.implies(&other.guard) && other.next.is_subset(&alts[i].next)
            })
        })
        .collect();
    alts.into_iter()
        .zip(keep)
        .filter_map(|(a, k)| k.then_some(a))
        .collect()
}

struct Expander {
    memo: HashMap<Formula, Vec<Alt>>,
}

impl Expander {
    fn formula(&mut self, f: &Formula) -> Vec<Alt> {
        if let Some(hit) = self.memo.get(f) {
            return hit.clone();
        }
        let alts = match f {
            Formula::True => vec![Alt {
                guard: Guard::top(),
                next: Obligations::new(),
            }],
            Formula::Atom(p) => vec![Alt {
                guard: Guard {
                    pos: BTreeSet::from([p.clone()]),
                    neg: BTreeSet::new(),
                },
                next: Obligations::new(),
            }],
            Formula::NegAtom(p) => vec![Alt {
                guard: Guard {
                    pos: BTreeSet::new(),
                    neg: BTreeSet::from([p.clone()]),
                },
                next: Obligations::new(),
            }],
            Formula::And(a, b) => {
                let xa = self.formula(a);
                let xb = self.formula(b);
                product(&xa, &xb)
            }
            Formula::Or(a, b) => {
                let mut v = self.formula(a);
                v.extend(self.formula(b));
                v
            }
            Formula::Next(a) => vec![Alt {
                guard: Guard::top(),
                next: single(a),
            }],
            Formula::Eventually(a) => {
                let mut v = self.formula(a);
                v.push(Alt {
                    guard: Guard::top(),
                    next: single(f),
                });
                v
            }
            Formula::Until(a, b) => {
                let mut v = self.formula(b);
                let stay = vec![Alt {
                    guard: Guard::top(),
                    next: single(f),
                }];
                let xa = self.formula(a);
                v.extend(product(&xa, &stay));
                v
            }
        };
        let alts = prune(alts);
        self.memo.insert(f.clone(), alts.clone());
        alts
    }

    fn state(&mut self, obligations: &Obligations) -> Vec<Alt> {
        let mut acc = vec![Alt {
            guard: Guard::top(),
            next: Obligations::new(),
        }];
        for f in obligations {
            let xs = self.formula(f);
            acc = prune(product(&acc, &xs));
            if acc.is_empty() {
                break;
            }
        }
        acc
    }
}

fn show(obligations: &Obligations) -> String {
    if obligations.is_empty() {
        return "{}".into();
    }
    let parts: Vec<String> = obligations.iter().map(|f| f.to_string()).collect();
    format!("{{{}}}", parts.join(", "))
}

/// Builds the automaton with the default state bound.
pub fn to_automaton(f: &Formula) -> Result<FiniteAutomaton, FormulaError> {
    to_automaton_bounded(f, DEFAULT_STATE_LIMIT)
}

pub fn to_automaton_bounded(f: &Formula, limit: usize) -> Result<FiniteAutomaton, FormulaError> {
    let mut expander = Expander { memo: HashMap::new() };
    let mut ids: HashMap<Obligations, usize> = HashMap::new();
    let mut keys: Vec<Obligations> = Vec::new();
    let mut edges: Vec<Transition> = Vec::new();
    let mut queue = VecDeque::new();

    let init = single(f);
    ids.insert(init.clone(), 0);
    keys.push(init);
    queue.push_back(0usize);

    while let Some(s) = queue.pop_front() {
        let alts = expander.state(&keys[s].clone());
        for alt in alts {
            let to = match ids.get(&alt.next) {
                Some(&id) => id,
                None => {
                    let id = keys.len();
                    if id >= limit {
                        return Err(FormulaError::Capacity { limit });
                    }
                    ids.insert(alt.next.clone(), id);
                    keys.push(alt.next);
                    queue.push_back(id);
                    id
                }
            };
            edges.push(Transition {
                from: s,
                guard: alt.guard,
                to,
            });
        }
    }

    let accepting_raw: Vec<bool> = keys.iter().map(|k| k.iter().all(Formula::nullable)).collect();

    // Keep only states that can still reach acceptance.
    let n = keys.len();
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    for e in &edges {
        preds[e.to].push(e.from);
    }
    let mut live = accepting_raw.clone();
    let mut stack: Vec<usize> = (0..n).filter(|&i| live[i]).collect();
    while let Some(s) = stack.pop() {
        for &p in &preds[s] {
            if !live[p] {
                live[p] = true;
                stack.push(p);
            }
        }
    }
    let mut remap = vec![usize::MAX; n];
    let mut states = Vec::new();
    for i in 0..n {
        if live[i] {
            remap[i] = states.len();
            states.push(show(&keys[i]));
        }
    }
    let transitions: Vec<Transition> = edges
        .into_iter()
        .filter(|e| live[e.from] && live[e.to])
        .map(|e| Transition {
            from: remap[e.from],
            guard: e.guard,
            to: remap[e.to],
        })
        .collect();
    let initial = if live[0] { vec![remap[0]] } else { Vec::new() };
    let accepting = (0..n)
        .filter(|&i| live[i] && accepting_raw[i])
        .map(|i| remap[i])
        .collect();
    Ok(FiniteAutomaton::from_parts(states, transitions, initial, accepting))
}

impl FiniteAutomaton {
    pub fn from_parts(
        states: Vec<String>,
        transitions: Vec<Transition>,
        initial: Vec<usize>,
        accepting: BTreeSet<usize>,
    ) -> Self {
        let mut outgoing = vec![Vec::new(); states.len()];
        let mut alphabet = BTreeSet::new();
        for (i, t) in transitions.iter().enumerate() {
            outgoing[t.from].push(i);
            alphabet.extend(t.guard.pos.iter().cloned());
            alphabet.extend(t.guard.neg.iter().cloned());
        }
        Self {
            states,
            transitions,
            initial,
            accepting,
            alphabet,
            outgoing,
        }
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.initial.is_empty()
    }

    pub fn outgoing(&self, state: usize) -> impl Iterator<Item = &Transition> {
        self.outgoing[state].iter().map(move |&i| &self.transitions[i])
    }

    /// True iff some run over `trace` ends in an accepting state.
    pub fn accepts(&self, trace: &[Letter]) -> bool {
        let mut current: BTreeSet<usize> = self.initial.iter().copied().collect();
        for letter in trace {
            let mut next = BTreeSet::new();
            for &s in &current {
                for t in self.outgoing(s) {
                    if t.guard.holds(letter) {
                        next.insert(t.to);
                    }
                }
            }
            if next.is_empty() {
                return false;
            }
            current = next;
        }
        current.iter().any(|s| self.accepting.contains(s))
    }
}

/// Free-function form of [`FiniteAutomaton::accepts`].
pub fn accepts(a: &FiniteAutomaton, trace: &[Letter]) -> bool {
    a.accepts(trace)
}
