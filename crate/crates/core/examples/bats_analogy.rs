//! Vocabulary coverage and demonstration-primed analogy solving on the
//! bundled BATS sample.
//!
//! cargo run --example bats_analogy

use std::path::Path;

use lmprobe::analogy::{evaluate_analogies, load_bats, AnalogyConfig};
use lmprobe::corpus::{RelationTemplate, TemplateStyle};
use lmprobe::scorer::{filler_tokens, ScriptedBackend, ScriptedConfig};

fn main() -> lmprobe::Result<()> {
    let load = load_bats(&Path::new(env!("CARGO_MANIFEST_DIR")).join("data/bats"))?;
    println!("{} relations, {} skipped lines", load.relations.len(), load.skipped.len());

    let template = RelationTemplate::symbolic("analogy", TemplateStyle::Semicolon)?;
    // leave the "un-" targets out of the vocabulary to make some pairs unsolvable
    let mut tokens = filler_tokens(200);
    let mut config = ScriptedConfig::new(Vec::<String>::new());
    for r in &load.relations {
        for p in &r.pairs {
            if !p.targets[0].starts_with("un") {
                tokens.push(p.targets[0].clone());
            }
            config.plant(&template, &p.source, &p.targets[0]);
        }
    }
    config.tokens = tokens;
    let backend = ScriptedBackend::new(config)?;

    for solvable_only in [false, true] {
        for n_demos in [0, 1, 5] {
            let config = AnalogyConfig { n_demos, solvable_only, ..AnalogyConfig::default() };
            let r = evaluate_analogies(&load.relations, &config, &backend)?;
            println!(
                "solvable_only={solvable_only:5} n={n_demos}  P@1 {:.3}  coverage {:.3}",
                r.overall.mean, r.coverage.fraction
            );
            if n_demos == 5 {
                for (c, s) in &r.per_category {
                    println!("    {c:25} {:.3}", s.mean);
                }
            }
        }
    }
    Ok(())
}
