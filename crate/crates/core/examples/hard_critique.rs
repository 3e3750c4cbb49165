//! Autoformalise an explanation with a scripted model, prove it, and print
//! the critique's feedback for an invalid and a repaired explanation.
//!
//!     cargo run --example hard_critique

use std::collections::BTreeMap;
use std::sync::Arc;

use peirce::critique::hard::HardCritique;
use peirce::critique::Critique;
use peirce::generation::ReplayModel;
use peirce::kb::{Explanation, NliProblem};

const FIRST: &str = "```prolog
@label(premise_1_1) infant(i).
@label(premise_1_2) crying(i).
@label(explanation_1) unhappy(X) :- infant(X), crying(X).
?- baby(X), unhappy(X).
```";

const SECOND: &str = "@label(premise_1_1) infant(i).
@label(premise_1_2) crying(i).
@label(explanation_1) unhappy(X) :- infant(X), crying(X).
@label(explanation_2) baby(X) :- infant(X).
?- baby(X), unhappy(X).";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let problem = NliProblem::new("infant", Some("An infant is in a crib and crying."), "A baby is unhappy.");
    let mut script = BTreeMap::new();
    script.insert("infant/formalise".to_string(), vec![FIRST.to_string(), SECOND.to_string()]);
    let critique = HardCritique::new(Arc::new(ReplayModel::new(script)?));

    for text in [
        "if the infant is crying, it can be assumed that they are unhappy.",
        "if the infant is crying, it can be assumed that they are unhappy. An infant is a type of baby.",
    ] {
        let report = critique.critique(&problem, &Explanation::from_text(text))?;
        println!("explanation: {text}");
        println!("valid: {}", report.is_valid());
        println!("feedback: {}", report.feedback);
        println!("theory:\n{}", report.artifacts["theory"]);
    }
    Ok(())
}
