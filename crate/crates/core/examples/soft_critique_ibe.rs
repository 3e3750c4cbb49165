//! Score two competing explanations of a cause-and-effect question on
//! coherence, parsimony and uncertainty, then pick one by majority vote.
//!
//!     cargo run --example soft_critique_ibe

use peirce::critique::soft::*;
use peirce::kb::{Explanation, NliProblem};

const FLEW_AWAY: &str = "If a cat chases a bird, then the bird may perceive a threat. \
If the bird perceives a threat, then it is likely to take evasive action to escape. \
If the bird takes evasive action to escape, then it may fly away from the area. \
If the bird flies away from the area, then it will no longer be in the vicinity of the cat. \
Therefore, since the cat chased the bird, the bird perceived a threat and took evasive action by flying away to escape from the cat.";

const CAUGHT_WORM: &str = "If a cat chases a bird, then the bird may become startled or distracted. \
If the bird is startled or distracted, then it may stop focusing on its current activity, such as foraging for food. \
If the bird stops focusing on foraging, then it may inadvertently come across other food sources, such as worms. \
If the bird comes across a worm, then it may catch the worm as a food source. \
Therefore, since the cat chased the bird, causing it to become startled and stop foraging, the bird may have inadvertently caught a worm as a result of this distraction.";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut problem = NliProblem::new("copa-cat", None, "The cat chased the bird? What was the effect?");
    problem.candidates = Some(vec!["The bird flew away.".into(), "The bird caught a worm.".into()]);

    let mut scores = Vec::new();
    for (i, text) in [FLEW_AWAY, CAUGHT_WORM].iter().enumerate() {
        let e = Explanation::from_text(text);
        let s = soft_scores(&problem, &e, &LexicalEntailment, HedgeLexicon::shipped())?;
        println!(
            "explanation {}: coherence {:.2}, parsimony {}, uncertainty {:.2}",
            i + 1,
            s.coherence,
            s.parsimony,
            s.uncertainty
        );
        println!("  new concepts: {}", concept_drift(&problem, &e).concepts.into_iter().collect::<Vec<_>>().join(", "));
        scores.push(s);
    }
    let out = ibe_select(&scores)?;
    println!("selected explanation {} with tally {:?}", out.selected + 1, out.tally);
    Ok(())
}
