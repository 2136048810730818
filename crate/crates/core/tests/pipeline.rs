//! End-to-end behaviour on the bundled data with the scripted backend.

mod common;

use std::collections::BTreeMap;

use lmprobe::analogy::{evaluate_analogies, load_bats, AnalogyConfig, AnalogyPair, AnalogyRelation, Category};
use lmprobe::corpus::{RelationTemplate, TemplateStyle};
use lmprobe::eval::{delta_report, run_probe, run_sweep, ProbeConfig, Selection};
use lmprobe::sampler::EmbeddingStore;
use lmprobe::scorer::{filler_tokens, CachedScorer, Scorer, ScriptedBackend, ScriptedConfig};
use lmprobe::twc::{build_prior, evaluate_agent, load_object_table, load_scenes, AgentOptions, PriorSource, Scene};

fn twc_backend(table: &BTreeMap<String, String>) -> ScriptedBackend {
    let arrow = RelationTemplate::symbolic("location", TemplateStyle::ArrowDouble).unwrap();
    let mut tokens: Vec<String> = table.values().flat_map(|l| l.split_whitespace()).map(String::from).collect();
    tokens.extend(filler_tokens(100));
    let mut config = ScriptedConfig::new(tokens);
    for (object, location) in table {
        config.plant(&arrow, object, location);
    }
    ScriptedBackend::new(config).unwrap()
}

#[test]
fn gold_probability_rises_with_demonstrations() {
    let (dataset, backend) = common::planted();
    let sweep = run_sweep(&dataset, &ProbeConfig::default(), &[0, 1, 3], &backend, &EmbeddingStore::in_memory()).unwrap();
    let probs: Vec<f64> = sweep.points.iter().map(|(_, r)| r.aggregate.mean_gold_prob.mean).collect();
    assert!(probs.windows(2).all(|w| w[0] < w[1]), "{probs:?}");
    let curve = sweep.p_at_k_curve(1, "p@1").unwrap();
    assert_eq!(curve.x, vec![0, 1, 3]);
}

#[test]
fn primed_probe_beats_zero_shot_on_every_relation() {
    let (dataset, backend) = common::planted();
    let store = EmbeddingStore::in_memory();
    let zero = run_probe(&dataset, &ProbeConfig::default(), &backend, &store).unwrap();
    let primed = ProbeConfig {
        n_demos: 3,
        selection: Selection::Close { k_pool: Some(6) },
        ..ProbeConfig::default()
    };
    let primed = run_probe(&dataset, &primed, &backend, &store).unwrap();
    let deltas = delta_report(&primed, &zero).unwrap();
    assert_eq!(deltas.len(), dataset.relations().len());
    assert!(deltas.iter().all(|d| d.delta_p_at_k.values().next().unwrap() > &0.0), "{deltas:?}");
    assert_eq!(primed.config_snapshot.k_pool, Some(6));
}

#[test]
fn persistent_cache_reproduces_results() {
    let (dataset, _) = common::planted();
    let dir = tempfile::tempdir().unwrap();
    let config = ProbeConfig {
        n_demos: 2,
        trials: 2,
        ..ProbeConfig::default()
    };
    let first = {
        let cached = CachedScorer::open(common::planted().1, dir.path()).unwrap();
        run_probe(&dataset, &config, &cached, &EmbeddingStore::in_memory()).unwrap()
    };
    let reopened = CachedScorer::open(common::planted().1, dir.path()).unwrap();
    assert!(reopened.sizes().0 > 0);
    let second = run_probe(&dataset, &config, &reopened, &EmbeddingStore::in_memory()).unwrap();
    assert_eq!(first, second);
}

#[test]
fn lm_prior_beats_uniform() {
    let data = common::data().join("twc");
    let scenes = load_scenes(&data.join("scenes")).unwrap();
    let table = load_object_table(&data.join("objects.json")).unwrap();
    let backend = twc_backend(&table);
    let options = AgentOptions { runs: 5, seed: 3, jobs: 2 };
    let score = |source| {
        evaluate_agent(&scenes, source, Some(&backend as &dyn Scorer), &table, &options)
            .unwrap()
            .score
            .mean
    };
    let uniform = score(PriorSource::Uniform);
    let lm = score(PriorSource::Lm { n_demos: 3 });
    let oracle = score(PriorSource::Oracle);
    assert!(lm > uniform, "lm {lm} uniform {uniform}");
    assert_eq!(oracle, 1.0);
}

#[test]
fn agent_results_do_not_depend_on_jobs() {
    let data = common::data().join("twc");
    let scenes = load_scenes(&data.join("scenes")).unwrap();
    let table = load_object_table(&data.join("objects.json")).unwrap();
    let backend = twc_backend(&table);
    let run = |jobs| {
        let options = AgentOptions { runs: 3, seed: 9, jobs };
        evaluate_agent(&scenes, PriorSource::Lm { n_demos: 1 }, Some(&backend as &dyn Scorer), &table, &options).unwrap()
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn single_location_prior_is_certain() {
    let table = load_object_table(&common::data().join("twc/objects.json")).unwrap();
    let backend = twc_backend(&table);
    let (object, location) = table.iter().next().unwrap();
    let gold = BTreeMap::from([(object.clone(), location.clone())]);
    let scene = Scene::new("one", vec![object.clone()], vec![location.clone()], gold, 2).unwrap();
    let lm = build_prior(&scene, &table, 2, &backend, 0).unwrap();
    assert_eq!(lm.prior.row(0), &[1.0]);
}

#[test]
fn solvable_only_never_scores_lower() {
    let load = load_bats(&common::data().join("bats")).unwrap();
    let template = RelationTemplate::symbolic("analogy", TemplateStyle::Semicolon).unwrap();
    let mut tokens = filler_tokens(100);
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
    let backend = ScriptedBackend::new(config).unwrap();
    let run = |solvable_only| {
        let config = AnalogyConfig { n_demos: 3, solvable_only, ..AnalogyConfig::default() };
        evaluate_analogies(&load.relations, &config, &backend).unwrap()
    };
    let (all, solvable) = (run(false), run(true));
    assert!(all.coverage.fraction < 1.0);
    assert!(solvable.overall.mean >= all.overall.mean);
}

#[test]
fn any_listed_target_counts_as_correct() {
    let template = RelationTemplate::symbolic("analogy", TemplateStyle::Semicolon).unwrap();
    let pairs: Vec<AnalogyPair> = ["big", "small", "tall"]
        .iter()
        .map(|s| AnalogyPair {
            source: s.to_string(),
            targets: vec![format!("{s}ger"), format!("{s}er")],
        })
        .collect();
    let mut tokens = filler_tokens(50);
    let mut config = ScriptedConfig::new(Vec::<String>::new());
    for p in &pairs {
        tokens.extend(p.targets.iter().cloned());
        // the model prefers the second spelling
        config.plant(&template, &p.source, &p.targets[1]);
    }
    config.tokens = tokens;
    let backend = ScriptedBackend::new(config).unwrap();
    let relation = AnalogyRelation {
        category: Category::InflectionalMorphology,
        name: "comparative".into(),
        pairs,
    };
    let r = evaluate_analogies(&[relation], &AnalogyConfig { n_demos: 2, ..AnalogyConfig::default() }, &backend).unwrap();
    assert_eq!(r.overall.mean, 1.0);
}
