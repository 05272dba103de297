use std::fmt;

use serde::{Deserialize, Serialize};

/// Atomic proposition over the robot/target/collaboration vocabulary.
///
/// `Reach` holds when a specific robot is within the reach threshold of a
/// target; `Collab` holds while a collaboration is executed on a target.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AtomicProp {
    Reach { robot: String, target: String },
    Collab { collab: String, target: String },
}

impl AtomicProp {
    pub fn reach(robot: impl Into<String>, target: impl Into<String>) -> Self {
        AtomicProp::Reach {
            robot: robot.into(),
            target: target.into(),
        }
    }

    pub fn collab(collab: impl Into<String>, target: impl Into<String>) -> Self {
        AtomicProp::Collab {
            collab: collab.into(),
            target: target.into(),
        }
    }

    pub fn target(&self) -> &str {
        match self {
            AtomicProp::Reach { target, .. } | AtomicProp::Collab { target, .. } => target,
        }
    }

    pub fn robot(&self) -> Option<&str> {
        match self {
            AtomicProp::Reach { robot, .. } => Some(robot),
            AtomicProp::Collab { .. } => None,
        }
    }

    pub fn collab_id(&self) -> Option<&str> {
        match self {
            AtomicProp::Collab { collab, .. } => Some(collab),
            AtomicProp::Reach { .. } => None,
        }
    }
}

impl fmt::Display for AtomicProp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AtomicProp::Reach { robot, target } => write!(f, "reach({robot},{target})"),
            AtomicProp::Collab { collab, target } => write!(f, "{collab}({target})"),
        }
    }
}

/// Co-safe LTL formula in positive normal form. Negation only wraps atoms.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Formula {
    True,
    Atom(AtomicProp),
    NegAtom(AtomicProp),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    Next(Box<Formula>),
    Until(Box<Formula>, Box<Formula>),
    Eventually(Box<Formula>),
}

impl Formula {
    pub fn atom(p: AtomicProp) -> Self {
        Formula::Atom(p)
    }

    pub fn neg(p: AtomicProp) -> Self {
        Formula::NegAtom(p)
    }

    pub fn and(self, other: Formula) -> Self {
        Formula::And(Box::new(self), Box::new(other))
    }

    pub fn or(self, other: Formula) -> Self {
        Formula::Or(Box::new(self), Box::new(other))
    }

    pub fn next(self) -> Self {
        Formula::Next(Box::new(self))
    }

    pub fn until(self, other: Formula) -> Self {
        Formula::Until(Box::new(self), Box::new(other))
    }

    pub fn eventually(self) -> Self {
        Formula::Eventually(Box::new(self))
    }

    /// Conjunction of a list; the empty list is `True`.
    pub fn conjunction(parts: impl IntoIterator<Item = Formula>) -> Self {
        parts
            .into_iter()
            .reduce(|acc, f| acc.and(f))
            .unwrap_or(Formula::True)
    }

    /// Holds on the empty suffix, i.e. no obligation is left.
    pub fn nullable(&self) -> bool {
        match self {
            Formula::True => true,
            Formula::And(a, b) => a.nullable() && b.nullable(),
            Formula::Or(a, b) => a.nullable() || b.nullable(),
            _ => false,
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Formula::True | Formula::Atom(_) | Formula::NegAtom(_) => 0,
            Formula::Next(a) | Formula::Eventually(a) => 1 + a.depth(),
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Until(a, b) => {
                1 + a.depth().max(b.depth())
            }
        }
    }

    pub fn temporal_operators(&self) -> usize {
        match self {
            Formula::True | Formula::Atom(_) | Formula::NegAtom(_) => 0,
            Formula::Next(a) | Formula::Eventually(a) => 1 + a.temporal_operators(),
            Formula::Until(a, b) => 1 + a.temporal_operators() + b.temporal_operators(),
            Formula::And(a, b) | Formula::Or(a, b) => a.temporal_operators() + b.temporal_operators(),
        }
    }

    /// Every proposition mentioned, positive or negated.
    pub fn props(&self) -> std::collections::BTreeSet<AtomicProp> {
        let mut out = std::collections::BTreeSet::new();
        self.collect_props(&mut out);
        out
    }

    fn collect_props(&self, out: &mut std::collections::BTreeSet<AtomicProp>) {
        match self {
            Formula::True => {}
            Formula::Atom(p) | Formula::NegAtom(p) => {
                out.insert(p.clone());
            }
            Formula::Next(a) | Formula::Eventually(a) => a.collect_props(out),
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Until(a, b) => {
                a.collect_props(out);
                b.collect_props(out);
            }
        }
    }

    /// Splits nested top-level conjunctions into their conjuncts.
    pub fn conjuncts(&self) -> Vec<&Formula> {
        match self {
            Formula::And(a, b) => {
                let mut v = a.conjuncts();
                v.extend(b.conjuncts());
                v
            }
            other => vec![other],
        }
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formula::True => write!(f, "true"),
            Formula::Atom(p) => write!(f, "{p}"),
            Formula::NegAtom(p) => write!(f, "!{p}"),
            Formula::And(a, b) => write!(f, "({a} & {b})"),
            Formula::Or(a, b) => write!(f, "({a} | {b})"),
            Formula::Next(a) => write!(f, "X {a}"),
            Formula::Until(a, b) => write!(f, "({a} U {b})"),
            Formula::Eventually(a) => write!(f, "F {a}"),
        }
    }
}

impl Serialize for Formula {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Formula {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        super::parse_scltl(&text).map_err(serde::de::Error::custom)
    }
}
