//! Render prompt templates, drive a scripted model by label and by prompt
//! hash, and serialise the generation records.
//!
//!     cargo run --example prompt_templates

use std::collections::BTreeMap;

use peirce::generation::*;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let template = PromptTemplate::parse(
        "Premise: {premise}\nHypothesis: {hypothesis}\nExplain in {{at most}} {n} sentences.",
    )?;
    println!("variables: {:?}", template.variables());

    let mut bindings = Bindings::new();
    bindings.insert("premise".into(), "An infant is in a crib and crying.".into());
    bindings.insert("hypothesis".into(), "A baby is unhappy.".into());
    match template.render(&bindings) {
        Err(e) => println!("missing binding: {e}"),
        Ok(_) => unreachable!(),
    }
    bindings.insert("n".into(), "2".into());
    let prompt = template.render(&bindings)?;
    println!("---\n{prompt}\n---");

    // Scripts are keyed either by an explicit label or by the prompt's hash.
    let mut script = BTreeMap::new();
    script.insert(
        "infant/explain".to_string(),
        vec!["An infant is a baby. A crying baby is unhappy.".to_string()],
    );
    script.insert(prompt_key(&prompt), vec!["Crying signals distress.".to_string()]);
    let model = ReplayModel::new(script)?;

    let by_label = generate(&model, &template, &bindings, Some("infant/explain"))?;
    let by_hash = generate(&model, &template, &bindings, None)?;
    println!("by label: {}", by_label.response);
    println!("by hash:  {}", by_hash.response);
    match generate(&model, &template, &bindings, None) {
        Err(e) => println!("third call: {e}"),
        Ok(_) => unreachable!(),
    }
    print!("{}", records_to_jsonl(&[by_label, by_hash]));
    Ok(())
}
