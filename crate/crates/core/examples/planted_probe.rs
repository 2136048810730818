//! Probe a scripted backend whose planted facts only surface after at least
//! one demonstration, and print the P@1 curve over demonstration counts.
//!
//! cargo run --example planted_probe

use std::path::Path;

use lmprobe::corpus::{filter_single_token_objects, load_corpus, load_templates};
use lmprobe::eval::{run_sweep, ProbeConfig};
use lmprobe::sampler::EmbeddingStore;
use lmprobe::scorer::{filler_tokens, CachedScorer, Scorer, ScorerTokenizer, ScriptedBackend, ScriptedConfig};

fn main() -> lmprobe::Result<()> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let templates = load_templates(&data.join("templates.jsonl"))?;
    let dataset = load_corpus(&data.join("facts.jsonl"), "sample", Some(&templates))?.dataset;

    let mut tokens: Vec<String> = dataset.facts().map(|f| f.object.clone()).collect();
    tokens.extend(filler_tokens(300));
    let mut config = ScriptedConfig::new(tokens).with_seed(3);
    config.plant_dataset(&dataset);
    let backend = CachedScorer::in_memory(ScriptedBackend::new(config)?);

    let vocab = backend.descriptor().vocabulary.clone();
    let dataset = filter_single_token_objects(&dataset, &vocab, &ScorerTokenizer(&backend)).dataset;

    let probe = ProbeConfig {
        trials: 3,
        k_list: vec![1, 10],
        ..ProbeConfig::default()
    };
    let sweep = run_sweep(&dataset, &probe, &[0, 1, 3, 10], &backend, &EmbeddingStore::in_memory())?;
    let curve = sweep.p_at_k_curve(1, "random-nl")?;
    for i in 0..curve.x.len() {
        println!("n={:2}  P@1 {:.3} ± {:.3}", curve.x[i], curve.y[i], curve.yerr[i]);
    }
    let last = &sweep.points.last().expect("non-empty sweep").1;
    for (relation, r) in &last.per_relation {
        println!("  {relation:5} P@1 {:.3} MRR {:.3}", r.p_at_k[&1].mean, r.mrr.mean);
    }
    Ok(())
}
