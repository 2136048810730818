//! Nearest-subject demonstration selection with a scripted embedding space.
//!
//! Subjects assigned to the same cluster embed close together, so the close
//! sampler picks demonstrations from the query's own cluster.
//!
//! cargo run --example close_examples

use lmprobe::corpus::FactTriple;
use lmprobe::sampler::{rank_by_similarity, select_close, EmbeddingStore, ExamplePool, SelectOptions};
use lmprobe::scorer::{BatchOptions, Scorer, ScriptedBackend, ScriptedConfig};

fn main() -> lmprobe::Result<()> {
    let facts = [
        ("Rodmarton", "village", "uk"),
        ("Nantmor", "village", "uk"),
        ("Bibury", "village", "uk"),
        ("Totopara", "village", "india"),
        ("Danube", "river", "rivers"),
        ("Tisza", "river", "rivers"),
        ("Rhine", "river", "rivers"),
        ("Thriller", "album", "music"),
        ("Abbey Road", "album", "music"),
    ];
    let mut config = ScriptedConfig::new(["village", "river", "album"]);
    for (s, _, cluster) in &facts {
        config.cluster(s, cluster);
    }
    let backend = ScriptedBackend::new(config)?;
    let triples: Vec<FactTriple> = facts
        .iter()
        .map(|(s, o, _)| FactTriple::new(*s, "P31", *o))
        .collect::<lmprobe::Result<_>>()?;

    let store = EmbeddingStore::in_memory();
    let subjects: Vec<String> = triples.iter().map(|f| f.subject.clone()).collect();
    let embeddings = store.embed_all(&backend, &subjects, &BatchOptions::default())?;
    println!("embedding dimension {}", backend.descriptor().hidden_size);
    let pool = ExamplePool::new("P31", triples.clone()).with_embeddings(embeddings.clone())?;

    let query = &triples[0];
    for (i, sim) in rank_by_similarity(query, &embeddings[0], &pool, &SelectOptions::default())? {
        println!("{:12} {sim:+.3}", pool.candidates[i].subject);
    }
    let demos = select_close(query, &embeddings[0], &pool, 1, 2, 7, &SelectOptions::default())?;
    println!("demonstration for {}: {}", query.subject, demos.facts[0].subject);
    Ok(())
}
