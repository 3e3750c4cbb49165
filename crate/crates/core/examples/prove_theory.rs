//! Parse a labelled Horn theory, prove its goal, replay the proof, and look
//! at the diagnostics of a failed attempt.
//!
//!     cargo run --example prove_theory

use peirce::logic::parse_theory;
use peirce::prover::{brute_force_entailed, check_proof, prove, DEFAULT_HERBRAND_CAP, DEFAULT_MAX_DEPTH};

const INFANT: &str = "
@label(premise_1) infant(i).
@label(premise_2) crying(i).
@label(explanation_1) unhappy(X) :- infant(X), crying(X).
@label(explanation_2) baby(X) :- infant(X).
?- baby(X), unhappy(X).
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let theory = parse_theory(INFANT)?;
    print!("{theory}");

    let verdict = prove(&theory, DEFAULT_MAX_DEPTH)?;
    let proof = verdict.proof.as_ref().expect("the infant theory is provable");
    println!("\nvalid in {} steps, depth {}", proof.steps.len(), proof.depth);
    for step in &proof.steps {
        println!("  {:<28} by {}", step.goal.to_string(), step.clause);
    }
    println!("replays: {}", check_proof(&theory, proof)?);
    println!("oracle agrees: {}", brute_force_entailed(&theory, DEFAULT_HERBRAND_CAP)?);

    // Drop the bridging rule and the goal no longer follows.
    let broken = parse_theory(&INFANT.replace("@label(explanation_2) baby(X) :- infant(X).", ""))?;
    let verdict = prove(&broken, DEFAULT_MAX_DEPTH)?;
    let d = verdict.diagnostics.expect("failed proofs carry diagnostics");
    println!("\nwithout explanation_2: valid = {}", verdict.valid);
    println!("  unresolved: {}", d.frontier.iter().map(ToString::to_string).collect::<Vec<_>>().join(", "));
    println!("  unused clauses: {}", d.unused_clauses.join(", "));
    println!("  depth limited: {}", d.depth_limited);

    // Left recursion terminates thanks to loop pruning.
    let path = parse_theory(
        "path(X, Y) :- path(X, Z), edge(Z, Y). path(X, Y) :- edge(X, Y).
         edge(a, b). edge(b, c). edge(c, d). ?- path(a, d).",
    )?;
    println!("\npath(a, d): {}", prove(&path, DEFAULT_MAX_DEPTH)?.valid);
    Ok(())
}
