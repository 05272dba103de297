use std::collections::BTreeSet;

use umbrella::formula::{parse_scltl, to_automaton, Letter};
use umbrella::poset::{check_poset_soundness, compute_poset, RPoset};

const CORPUS: &[&str] = &[
    "F monitor(a)",
    "F monitor(a) & F film(b)",
    "F (monitor(a) & F film(a))",
    "F (monitor(a) & !film(a) & F film(a))",
    "F reach(r1,a) & F reach(r2,b)",
    "F (reach(r1,a) & F (reach(r1,b) & F reach(r1,c)))",
    "F monitor(a) & F monitor(b) & F monitor(c) & F monitor(d)",
    "!film(a) U monitor(a)",
    "(!film(a) U monitor(a)) & F film(a)",
    "F (monitor(a) & X F film(b))",
    "F monitor(a) | F film(b)",
    "F (monitor(a) | film(a)) & F film(b)",
    "F (monitor(a) & F (film(a) & F monitor(b)))",
    "F (reach(r1,a) & monitor(a))",
    "!monitor(b) U (monitor(a) & F monitor(b))",
    "F (film(a) & F film(b)) & F monitor(c)",
    "F monitor(a) & (!monitor(a) U film(b))",
    "monitor(b) & X F monitor(a)",
    "F (monitor(a) & F film(a)) & F (monitor(b) & F film(b))",
    "F (reach(r1,a) & F reach(r2,a)) & F film(c)",
    "(monitor(a) | film(b)) U film(c)",
    "F (monitor(a) & !film(a)) & F film(a)",
    "F (film(a) & X monitor(a))",
    "F (monitor(a) & F film(b) & F film(c))",
];

fn orders(p: &RPoset) -> Vec<Vec<usize>> {
    fn go(p: &RPoset, done: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if done.len() == p.subtasks.len() {
            out.push(done.clone());
            return;
        }
        for w in 0..p.subtasks.len() {
            if done.contains(&w) || !p.predecessors(w).all(|v| done.contains(&v)) {
                continue;
            }
            done.push(w);
            go(p, done, out);
            done.pop();
        }
    }
    let mut out = Vec::new();
    go(p, &mut Vec::new(), &mut out);
    out
}

#[test]
fn corpus_is_large_and_shallow() {
    assert!(CORPUS.len() >= 20);
    for text in CORPUS {
        let f = parse_scltl(text).unwrap();
        assert!(f.temporal_operators() <= 4, "{text} has too many temporal operators");
    }
}

#[test]
fn every_linearization_is_accepted() {
    for text in CORPUS {
        let f = parse_scltl(text).unwrap();
        let a = to_automaton(&f).unwrap();
        let p = compute_poset(&a).unwrap_or_else(|e| panic!("{text}: {e}"));
        assert!(check_poset_soundness(&p, &a).unwrap(), "{text}");
        let lins = orders(&p);
        assert!(!lins.is_empty(), "{text}: precedence has a cycle");
        for order in lins {
            let trace: Vec<Letter> = order.iter().map(|&w| p.subtasks[w].label.clone()).collect();
            assert!(a.accepts(&trace), "{text}: rejected order {order:?}");
        }
    }
}

#[test]
fn covering_pairs_are_a_transitive_reduction() {
    for text in CORPUS {
        let a = to_automaton(&parse_scltl(text).unwrap()).unwrap();
        let p = compute_poset(&a).unwrap();
        let pairs: BTreeSet<(usize, usize)> = p.precedence.iter().copied().collect();
        for &(x, y) in &pairs {
            for &(u, v) in &pairs {
                if u == y {
                    assert!(!pairs.contains(&(x, v)), "{text}: ({x},{v}) is implied");
                }
            }
        }
    }
}
