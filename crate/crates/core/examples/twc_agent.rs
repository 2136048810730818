//! Tidy the bundled rooms with uniform, oracle and LM priors.
//!
//! cargo run --example twc_agent

use std::path::Path;

use lmprobe::corpus::{RelationTemplate, TemplateStyle};
use lmprobe::scorer::{filler_tokens, CachedScorer, ScriptedBackend, ScriptedConfig};
use lmprobe::twc::{evaluate_agent, load_object_table, load_scenes, run_episode, AgentOptions, Prior, PriorSource};

fn main() -> lmprobe::Result<()> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/twc");
    let scenes = load_scenes(&data.join("scenes"))?;
    let table = load_object_table(&data.join("objects.json"))?;

    // plant every commonsense placement under the arrow template
    let arrow = RelationTemplate::symbolic("location", TemplateStyle::ArrowDouble)?;
    let mut tokens: Vec<String> = table.values().flat_map(|l| l.split_whitespace()).map(String::from).collect();
    tokens.extend(filler_tokens(100));
    let mut config = ScriptedConfig::new(tokens);
    for (object, location) in &table {
        config.plant(&arrow, object, location);
    }
    let backend = CachedScorer::in_memory(ScriptedBackend::new(config)?);

    let episode = run_episode(&scenes[0], &Prior::uniform(&scenes[0]), 1)?;
    println!("one uniform episode in {}: {} steps", scenes[0].id, episode.steps_used);
    for p in &episode.placement_log {
        println!("  {} -> {} {}", p.object, p.location, if p.correct { "ok" } else { "wrong" });
    }

    let options = AgentOptions { runs: 10, seed: 0, jobs: 2 };
    let mut sources = vec![PriorSource::Uniform, PriorSource::Oracle];
    sources.extend([0, 1, 3, 5].map(|n_demos| PriorSource::Lm { n_demos }));
    for source in sources {
        let r = evaluate_agent(&scenes, source, Some(&backend), &table, &options)?;
        println!("{:8} {:.3} ± {:.3}  ({:.1} steps)", source.to_string(), r.score.mean, r.score.stddev, r.mean_steps);
    }
    Ok(())
}
