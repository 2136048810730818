#![allow(dead_code)]

use std::path::{Path, PathBuf};

use lmprobe::corpus::{filter_single_token_objects, load_corpus, load_templates, Dataset};
use lmprobe::scorer::{filler_tokens, Scorer, ScorerTokenizer, ScriptedBackend, ScriptedConfig};

pub fn data() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data")
}

/// Bundled facts, planted into a scripted backend, filtered to single tokens.
pub fn planted() -> (Dataset, ScriptedBackend) {
    let d = data();
    let templates = load_templates(&d.join("templates.jsonl")).unwrap();
    let dataset = load_corpus(&d.join("facts.jsonl"), "facts", Some(&templates))
        .unwrap()
        .dataset;
    let mut tokens: Vec<String> = dataset.facts().map(|f| f.object.clone()).collect();
    tokens.extend(filler_tokens(300));
    let mut config = ScriptedConfig::new(tokens).with_seed(11);
    config.plant_dataset(&dataset);
    let backend = ScriptedBackend::new(config).unwrap();
    let vocab = backend.descriptor().vocabulary.clone();
    let dataset = filter_single_token_objects(&dataset, &vocab, &ScorerTokenizer(&backend)).dataset;
    (dataset, backend)
}
