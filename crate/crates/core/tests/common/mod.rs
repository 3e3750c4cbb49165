//! Shared generators for integration tests.
#![allow(dead_code)]

use peirce::logic::{Atom, Clause, Term, Theory};
use rand::seq::SliceRandom;
use rand::Rng;

const CONSTANTS: [&str; 3] = ["a", "b", "c"];
const VARIABLES: [&str; 3] = ["X", "Y", "Z"];

/// Random function-free Horn theory: at most 6 predicates of arity at most 2,
/// at most 3 constants, at most 8 clauses and a ground goal.
pub fn random_theory<R: Rng>(rng: &mut R) -> Theory {
    let n_preds = rng.gen_range(1..=6);
    let preds: Vec<(String, usize)> = (0..n_preds)
        .map(|i| (format!("p{i}"), rng.gen_range(0..=2)))
        .collect();
    let n_consts = rng.gen_range(1..=3);
    let consts = &CONSTANTS[..n_consts];

    let term = |rng: &mut R, allow_var: bool| {
        if allow_var && rng.gen_bool(0.5) {
            Term::var(*VARIABLES.choose(rng).unwrap())
        } else {
            Term::constant(*consts.choose(rng).unwrap())
        }
    };
    let atom = |rng: &mut R, allow_var: bool| {
        let (p, arity) = preds.choose(rng).unwrap().clone();
        Atom::new(p, (0..arity).map(|_| term(rng, allow_var)).collect())
    };

    let n_clauses = rng.gen_range(1..=8);
    let clauses = (0..n_clauses)
        .map(|i| {
            let body_len = match rng.gen_range(0..10) {
                0..=3 => 0,
                4..=7 => 1,
                _ => 2,
            };
            let head_vars = body_len > 0 || rng.gen_bool(0.2);
            Clause {
                head: atom(rng, head_vars),
                body: (0..body_len).map(|_| atom(rng, true)).collect(),
                label: format!("c{}", i + 1),
            }
        })
        .collect();
    let goal_len = rng.gen_range(1..=2);
    let goal = (0..goal_len).map(|_| atom(rng, false)).collect();
    Theory { clauses, goal }
}
