//! Load the bundled fact corpus, apply the single-token filter and print counts.
//!
//! cargo run --example corpus_stats

use std::path::Path;

use lmprobe::corpus::{
    dataset_stats, filter_single_token_objects, load_corpus, load_templates, Vocabulary, WhitespaceTokenizer,
};

fn main() -> lmprobe::Result<()> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let templates = load_templates(&data.join("templates.jsonl"))?;
    let load = load_corpus(&data.join("facts.jsonl"), "sample", Some(&templates))?;
    println!("skipped lines: {}", load.skipped.len());

    // a vocabulary made of every whitespace token of the objects
    let vocab = Vocabulary::new(
        load.dataset.facts().map(|f| f.object.clone()),
        "[MASK]",
        true,
    );
    let filtered = filter_single_token_objects(&load.dataset, &vocab, &WhitespaceTokenizer);
    println!("retained {} dropped {}", filtered.retained(), filtered.dropped());

    let stats = dataset_stats(&filtered.dataset);
    println!("{} facts in {} relations", stats.facts, stats.relations);
    for (relation, n) in &stats.per_relation {
        println!("  {relation:6} {n}");
    }
    for (class, c) in &stats.per_cardinality {
        println!("  {class:4} {} facts / {} relations", c.facts, c.relations);
    }
    Ok(())
}
