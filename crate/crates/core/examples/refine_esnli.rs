//! Run the conjecture-criticism loop on the shipped e-SNLI, WorldTree and
//! clinical cases with a scripted model, then print the traces and the
//! cumulative summary.
//!
//!     cargo run --example refine_esnli

use std::sync::Arc;

use peirce::critique::soft::{HedgeLexicon, LexicalEntailment};
use peirce::generation::ReplayModel;
use peirce::kb::load_problems;
use peirce::prover::HornProver;
use peirce::refine::*;

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = Arc::new(ReplayModel::load(format!("{FIXTURES}/refine_replay.json"))?);
    let registry = CritiqueRegistry::standard(
        model.clone(),
        Arc::new(HornProver::default()),
        Arc::new(LexicalEntailment),
        Arc::new(HedgeLexicon::shipped().clone()),
    );
    let config = RefinementConfig {
        critiques: vec!["hard".into(), "parsimony".into(), "uncertainty".into()],
        ..RefinementConfig::default()
    };
    let refiner = Refiner::new(model, registry, config)?;
    let problems = load_problems(format!("{FIXTURES}/refine_problems.jsonl"))?;

    let infant = refiner.refine(&problems[0], None)?;
    print!("{}", trace_to_markdown(&infant));

    let batch = refine_batch(&refiner, &problems[1..], &[], 2);
    for trace in batch.traces.iter().flatten() {
        println!("{}: valid = {}, iterations = {}", trace.problem.id, trace.final_valid, trace.iterations.len());
    }
    println!();
    print!("{}", summary_to_markdown(&batch.summary));
    Ok(())
}
