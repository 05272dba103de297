//! Co-safe LTL task formulas: syntax, parsing and finite-trace automata.

mod ast;
mod automaton;
mod parser;

use std::collections::BTreeSet;

use thiserror::Error;

pub use ast::{AtomicProp, Formula};
pub use automaton::{
    accepts, to_automaton, to_automaton_bounded, FiniteAutomaton, Guard, Letter, Transition,
    DEFAULT_STATE_LIMIT,
};
pub use parser::parse_scltl;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FormulaError {
    #[error("syntax error at {line}:{column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("formula is not co-safe at {line}:{column}: {message}")]
    NonCoSafe {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("automaton exceeds the bound of {limit} states")]
    Capacity { limit: usize },
    #[error("undeclared {kind} `{name}` in proposition {prop}")]
    Undeclared {
        kind: &'static str,
        name: String,
        prop: String,
    },
}

/// Identifier sets a formula's propositions must resolve against.
#[derive(Debug, Clone, Default)]
pub struct Declarations {
    pub robots: BTreeSet<String>,
    pub targets: BTreeSet<String>,
    pub collaborations: BTreeSet<String>,
}

impl Formula {
    pub fn check_declared(&self, decls: &Declarations) -> Result<(), FormulaError> {
        for p in self.props() {
            let undeclared = |kind: &'static str, name: &str| FormulaError::Undeclared {
                kind,
                name: name.to_string(),
                prop: p.to_string(),
            };
            if !decls.targets.contains(p.target()) {
                return Err(undeclared("target", p.target()));
            }
            match &p {
                AtomicProp::Reach { robot, .. } if !decls.robots.contains(robot) => {
                    return Err(undeclared("robot", robot));
                }
                AtomicProp::Collab { collab, .. } if !decls.collaborations.contains(collab) => {
                    return Err(undeclared("collaboration", collab));
                }
                _ => {}
            }
        }
        Ok(())
    }
}
