//! Rank a constructed science corpus with BM25, a unification model fitted
//! on solved problems, and their weighted ensemble; report MAP for each.
//!
//!     cargo run --example retrieval_ensemble

use peirce::kb::{load_kb, load_problems, FORMAT_JSONL_V1};
use peirce::retrieval::*;

const DIR: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/retrieval");

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let kb = load_kb(format!("{DIR}/kb.jsonl"), FORMAT_JSONL_V1)?;
    let training: Vec<TrainingProblem> = load_problems(format!("{DIR}/train.jsonl"))?
        .into_iter()
        .filter_map(|p| {
            let text = p.query_text();
            p.gold_premise_ids.map(|gold_ids| TrainingProblem { text, gold_ids })
        })
        .collect();
    let queries: Vec<Query> = load_problems(format!("{DIR}/queries.jsonl"))?
        .iter()
        .map(|p| Query::new(p.id.clone(), p.query_text()))
        .collect();
    let gold = load_gold(format!("{DIR}/gold.jsonl"))?;

    let bm25 = Bm25Index::from_statements(kb.statements(), Bm25Params::default())?;
    let mut unification = UnificationModel::new(kb.statements(), Bm25Params::default());
    unification.fit(&training)?;

    let q = &queries[0];
    println!("query {}: {}", q.id, q.text);
    for (name, model) in [("bm25", &bm25 as &dyn RetrievalModel), ("unification", &unification)] {
        let top: Vec<String> = model.query(std::slice::from_ref(q))?[0]
            .top(3)
            .iter()
            .map(|(id, s)| format!("{id} ({s:.3})"))
            .collect();
        println!("  {name:<12} {}", top.join(", "));
    }

    let runs = [
        ("bm25", bm25.query(&queries)?),
        ("unification", unification.query(&queries)?),
    ];
    let ensemble = EnsembleModel::new(vec![Box::new(bm25), Box::new(unification)], DEFAULT_ENSEMBLE_WEIGHTS.to_vec())?;
    let ensemble_run = ensemble.query(&queries)?;

    println!("\nmodel        MAP");
    for (name, rankings) in runs.iter().map(|(n, r)| (*n, r)).chain([("ensemble", &ensemble_run)]) {
        println!("{name:<12} {:.4}", evaluate_map(rankings, &gold)?);
    }
    print!("\n{}", rankings_to_tsv(&[ensemble_run[0].clone()]).lines().take(4).collect::<Vec<_>>().join("\n"));
    println!();
    Ok(())
}
