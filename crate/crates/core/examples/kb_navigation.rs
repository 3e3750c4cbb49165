//! Build a small explanation corpus, follow premise links and filter by
//! annotation, then load the shipped retrieval corpus from disk.
//!
//!     cargo run --example kb_navigation

use peirce::kb::{load_kb, KnowledgeBase, Statement, FORMAT_JSONL_V1};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let kb = KnowledgeBase::from_statements(
        "worldtree-mini",
        vec![
            Statement::new("f1", "reading is a kind of skill").annotate("type", "fact"),
            Statement::new("f2", "skills are learned characteristics").annotate("type", "fact"),
            Statement::new("f3", "a learned characteristic is a kind of learned trait").annotate("type", "fact"),
            Statement::new("h1", "being able to read is an example of a learned trait")
                .annotate("type", "hypothesis")
                .with_premises(&["f1", "f2", "f3"]),
        ],
    )?;

    println!("{} statements in `{}`", kb.len(), kb.name());
    println!("explanation of h1:");
    for s in kb.explanation_of("h1")? {
        println!("  {}: {}", s.id, s.surface);
    }
    let facts: Vec<&str> = kb.filter_statements("type", "fact").iter().map(|s| s.id.as_str()).collect();
    println!("facts: {}", facts.join(", "));
    print!("canonical form:\n{}", kb.to_canonical_jsonl());

    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/retrieval/kb.jsonl");
    let corpus = load_kb(path, FORMAT_JSONL_V1)?;
    for kind in ["generic", "specific", "noise"] {
        println!("{kind}: {}", corpus.filter_statements("type", kind).len());
    }
    Ok(())
}
