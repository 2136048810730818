//! Persist backend responses on disk and reuse them across processes.
//!
//! cargo run --example cached_scoring -- /tmp/lmprobe-cache

use std::path::PathBuf;

use lmprobe::scorer::{fill_mask_all, BatchOptions, CachedScorer, ScriptedBackend, ScriptedConfig};

fn main() -> lmprobe::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("lmprobe-cache-example"));
    let backend = ScriptedBackend::new(ScriptedConfig::new(["paris", "rome", "berlin"]))?;
    let cached = CachedScorer::open(backend, &dir)?;
    println!("cache at {} holds {:?} entries", dir.display(), cached.sizes());

    let prompts: Vec<String> = ["The capital of France is [MASK] .", "The capital of Italy is [MASK] ."]
        .map(String::from)
        .to_vec();
    let batch = BatchOptions { batch_size: 1, jobs: 2 };
    for d in fill_mask_all(&cached, &prompts, None, &batch)? {
        let top = &d.entries()[0];
        println!("{} -> {} ({:.3})", &d.prompt_digest()[..8], top.token, top.prob);
    }
    println!("now {:?} entries; run again to be served from disk", cached.sizes());
    Ok(())
}
