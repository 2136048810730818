//! Room-tidying game and the LM-prior agent.
//!
//! Each loop iteration is one step: either picking up a random unplaced
//! object or trying to put the held object at a location sampled from its
//! prior row. A wrong location is zeroed in the row, the row renormalized,
//! and the agent keeps holding the object.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{FactTriple, RelationTemplate, TemplateStyle};
use crate::error::{Error, Result};
use crate::eval::Stat;
use crate::prompt::{assemble_prompt, PromptOptions, Separator};
use crate::scorer::{score_candidates, Scorer, MASS_EPSILON};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scene {
    pub id: String,
    pub objects: Vec<String>,
    pub locations: Vec<String>,
    pub gold: BTreeMap<String, String>,
    pub budget: usize,
}

#[derive(Deserialize)]
struct SceneFile {
    objects: Vec<String>,
    locations: Vec<String>,
    gold: BTreeMap<String, String>,
    budget: usize,
}

fn distinct(items: &[String]) -> bool {
    items.iter().collect::<BTreeSet<_>>().len() == items.len()
}

impl Scene {
    pub fn new(
        id: impl Into<String>,
        objects: Vec<String>,
        locations: Vec<String>,
        gold: BTreeMap<String, String>,
        budget: usize,
    ) -> Result<Self> {
        let id = id.into();
        let bad = |msg: String| Err(Error::Config(format!("scene {id}: {msg}")));
        if objects.is_empty() || locations.is_empty() {
            return bad("objects and locations must be non-empty".into());
        }
        if !distinct(&objects) || !distinct(&locations) {
            return bad("duplicate object or location".into());
        }
        for o in &objects {
            match gold.get(o) {
                None => return bad(format!("no gold location for {o}")),
                Some(l) if !locations.contains(l) => {
                    return bad(format!("gold location {l} of {o} is not in the scene"))
                }
                _ => {}
            }
        }
        Ok(Scene {
            id,
            objects,
            locations,
            gold,
            budget,
        })
    }

    fn gold_index(&self, object: usize) -> usize {
        let gold = &self.gold[&self.objects[object]];
        self.locations.iter().position(|l| l == gold).expect("scene invariant")
    }
}

/// Read one scene; its id is the file stem.
pub fn load_scene(path: &Path) -> Result<Scene> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: SceneFile =
        serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Scene::new(id, file.objects, file.locations, file.gold, file.budget)
}

/// A scene file, or every `*.json` file of a directory in name order.
pub fn load_scenes(path: &Path) -> Result<Vec<Scene>> {
    if !path.is_dir() {
        return Ok(vec![load_scene(path)?]);
    }
    let mut files: Vec<_> = std::fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Config(format!("no scene files in {}", path.display())));
    }
    files.iter().map(|p| load_scene(p)).collect()
}

/// Global object → location table used for demonstrations.
pub fn load_object_table(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))
}

/// Row-stochastic object × location table.
#[derive(Debug, Clone, PartialEq)]
pub struct Prior {
    objects: Vec<String>,
    locations: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl Prior {
    /// Rows are renormalized; each must be non-negative with positive mass.
    pub fn from_rows(objects: Vec<String>, locations: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.len() != objects.len() {
            return Err(Error::Config("prior needs one row per object".into()));
        }
        let mut normalized = Vec::with_capacity(rows.len());
        for (o, row) in objects.iter().zip(rows) {
            if row.len() != locations.len() {
                return Err(Error::Config(format!("prior row for {o} has the wrong length")));
            }
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::Config(format!("prior row for {o} has invalid entries")));
            }
            let total: f64 = row.iter().sum();
            if total <= 0.0 {
                return Err(Error::Config(format!("prior row for {o} has no mass")));
            }
            normalized.push(row.into_iter().map(|p| p / total).collect());
        }
        Ok(Prior {
            objects,
            locations,
            rows: normalized,
        })
    }

    pub fn uniform(scene: &Scene) -> Self {
        let p = 1.0 / scene.locations.len() as f64;
        Prior {
            objects: scene.objects.clone(),
            locations: scene.locations.clone(),
            rows: vec![vec![p; scene.locations.len()]; scene.objects.len()],
        }
    }

    /// Probability 1 on each object's gold location.
    pub fn oracle(scene: &Scene) -> Self {
        let rows = (0..scene.objects.len())
            .map(|o| {
                let mut row = vec![0.0; scene.locations.len()];
                row[scene.gold_index(o)] = 1.0;
                row
            })
            .collect();
        Prior {
            objects: scene.objects.clone(),
            locations: scene.locations.clone(),
            rows,
        }
    }

    pub fn objects(&self) -> &[String] {
        &self.objects
    }

    pub fn locations(&self) -> &[String] {
        &self.locations
    }

    pub fn row(&self, object: usize) -> &[f64] {
        &self.rows[object]
    }

    pub fn prob(&self, object: &str, location: &str) -> Option<f64> {
        let o = self.objects.iter().position(|x| x == object)?;
        let l = self.locations.iter().position(|x| x == location)?;
        Some(self.rows[o][l])
    }

    /// Zero one entry and rescale the rest of the row to sum to 1.
    ///
    /// Returns `false` when no mass is left; the row is then all zero.
    pub fn zero_and_renormalize(&mut self, object: usize, location: usize) -> bool {
        let row = &mut self.rows[object];
        row[location] = 0.0;
        let total: f64 = row.iter().sum();
        if total <= 0.0 {
            row.iter_mut().for_each(|p| *p = 0.0);
            return false;
        }
        row.iter_mut().for_each(|p| *p /= total);
        true
    }

    /// object → location → probability.
    pub fn table(&self) -> BTreeMap<String, BTreeMap<String, f64>> {
        self.objects
            .iter()
            .zip(&self.rows)
            .map(|(o, row)| {
                (
                    o.clone(),
                    self.locations.iter().cloned().zip(row.iter().copied()).collect(),
                )
            })
            .collect()
    }

    fn covers(&self, scene: &Scene) -> bool {
        self.objects == scene.objects && self.locations == scene.locations
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmPrior {
    pub prior: Prior,
    /// Fewest demonstrations any object's context received.
    pub effective_demos: usize,
}

fn twc_template() -> RelationTemplate {
    RelationTemplate::symbolic("location", TemplateStyle::ArrowDouble).expect("built-in template")
}

/// Prior from LM scores of the scene locations given `n_demos` true
/// placements of out-of-scene objects.
pub fn build_prior(
    scene: &Scene,
    table: &BTreeMap<String, String>,
    n_demos: usize,
    backend: &dyn Scorer,
    seed_value: u64,
) -> Result<LmPrior> {
    let template = twc_template();
    let options = PromptOptions::new(backend.descriptor().mask_token.clone())
        .with_separator(Separator::Newline);
    let pool: Vec<FactTriple> = table
        .iter()
        .filter(|(o, l)| !scene.objects.contains(o) && scene.locations.contains(l))
        .map(|(o, l)| FactTriple::new(o.clone(), "location", l.clone()))
        .collect::<Result<_>>()?;
    let take = n_demos.min(pool.len());
    if take < n_demos {
        log::debug!(
            "scene {}: {} out-of-scene objects for {n_demos} demonstrations",
            scene.id,
            pool.len()
        );
    }
    let mut rows = Vec::with_capacity(scene.objects.len());
    for (oi, object) in scene.objects.iter().enumerate() {
        let mut rng = seed::rng(seed::derive(seed_value, &[seed::label(&scene.id), oi as u64]));
        let demos: Vec<FactTriple> = index::sample(&mut rng, pool.len(), take)
            .into_iter()
            .map(|i| pool[i].clone())
            .collect();
        let query = FactTriple::new(object.clone(), "location", scene.gold[object].clone())?;
        let wrap = |e: Error| e.for_query(object, "location");
        let prompt = assemble_prompt(&query, &demos, &template, &options).map_err(wrap)?;
        let scores = score_candidates(backend, &prompt, &scene.locations).map_err(wrap)?;
        let mut row: Vec<f64> = scores.into_iter().map(|(_, s)| s.max(0.0)).collect();
        if row.iter().sum::<f64>() <= MASS_EPSILON {
            log::warn!("scene {}: no mass for {object}, using a uniform row", scene.id);
            row = vec![1.0; scene.locations.len()];
        }
        rows.push(row);
    }
    Ok(LmPrior {
        prior: Prior::from_rows(scene.objects.clone(), scene.locations.clone(), rows)?,
        effective_demos: take,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub object: String,
    pub location: String,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub normalized_score: f64,
    pub steps_used: usize,
    pub placement_log: Vec<Placement>,
}

impl EpisodeResult {
    pub fn placement_attempts(&self) -> usize {
        self.placement_log.len()
    }
}

/// Play one game under `prior`.
pub fn run_episode(scene: &Scene, prior: &Prior, seed_value: u64) -> Result<EpisodeResult> {
    if !prior.covers(scene) {
        return Err(Error::Config(format!(
            "prior does not match the objects and locations of scene {}",
            scene.id
        )));
    }
    let mut prior = prior.clone();
    let mut rng = seed::rng(seed_value);
    let mut unplaced: Vec<usize> = (0..scene.objects.len()).collect();
    let mut tried: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); scene.objects.len()];
    let mut holding: Option<usize> = None;
    let mut steps = 0;
    let mut log = Vec::new();
    let mut correct = 0usize;

    while !unplaced.is_empty() && steps < scene.budget {
        steps += 1;
        let Some(object) = holding else {
            holding = Some(unplaced[rng.gen_range(0..unplaced.len())]);
            continue;
        };
        if prior.row(object).iter().all(|&p| p == 0.0) {
            let untried: Vec<usize> = (0..scene.locations.len())
                .filter(|l| !tried[object].contains(l))
                .collect();
            let fallback = if untried.is_empty() {
                (0..scene.locations.len()).collect()
            } else {
                untried
            };
            let p = 1.0 / fallback.len() as f64;
            for l in fallback {
                prior.rows[object][l] = p;
            }
        }
        let location = WeightedIndex::new(prior.row(object))
            .map_err(|e| Error::Config(format!("prior row: {e}")))?
            .sample(&mut rng);
        let ok = location == scene.gold_index(object);
        log.push(Placement {
            object: scene.objects[object].clone(),
            location: scene.locations[location].clone(),
            correct: ok,
        });
        if ok {
            correct += 1;
            unplaced.retain(|&o| o != object);
            holding = None;
        } else {
            tried[object].insert(location);
            prior.zero_and_renormalize(object, location);
        }
    }
    Ok(EpisodeResult {
        normalized_score: correct as f64 / scene.objects.len() as f64,
        steps_used: steps,
        placement_log: log,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PriorSource {
    Uniform,
    Oracle,
    Lm { n_demos: usize },
}

impl fmt::Display for PriorSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PriorSource::Uniform => f.write_str("uniform"),
            PriorSource::Oracle => f.write_str("oracle"),
            PriorSource::Lm { n_demos } => write!(f, "lm:{n_demos}"),
        }
    }
}

impl FromStr for PriorSource {
    type Err = Error;

    /// `uniform`, `oracle`, `lm` (no demonstrations) or `lm:N`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(PriorSource::Uniform),
            "oracle" => Ok(PriorSource::Oracle),
            "lm" => Ok(PriorSource::Lm { n_demos: 0 }),
            _ => s
                .strip_prefix("lm:")
                .and_then(|n| n.parse().ok())
                .map(|n_demos| PriorSource::Lm { n_demos })
                .ok_or_else(|| Error::Config(format!("unknown prior {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentOptions {
    pub runs: usize,
    pub seed: u64,
    /// Worker threads for episodes.
    pub jobs: usize,
}

impl Default for AgentOptions {
    fn default() -> Self {
        AgentOptions {
            runs: 10,
            seed: 0,
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentReport {
    pub prior: PriorSource,
    /// Mean over scenes and runs; stddev of the per-run scene means.
    pub score: Stat,
    pub per_scene: BTreeMap<String, Stat>,
    pub mean_steps: f64,
    pub effective_demos: Option<usize>,
    pub runs: usize,
    pub seed: u64,
    pub backend_id: Option<String>,
}

struct Outcome {
    episode: EpisodeResult,
    effective_demos: Option<usize>,
}

/// Score `source` over every scene, `options.runs` times.
pub fn evaluate_agent(
    scenes: &[Scene],
    source: PriorSource,
    backend: Option<&dyn Scorer>,
    table: &BTreeMap<String, String>,
    options: &AgentOptions,
) -> Result<AgentReport> {
    if options.runs == 0 {
        return Err(Error::Config("runs must be at least 1".into()));
    }
    if scenes.is_empty() {
        return Err(Error::Config("no scenes".into()));
    }
    if matches!(source, PriorSource::Lm { .. }) && backend.is_none() {
        return Err(Error::Config("an LM prior needs a backend".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..scenes.len())
        .flat_map(|s| (0..options.runs).map(move |r| (s, r)))
        .collect();
    let play = |&(s, r): &(usize, usize)| -> Result<Outcome> {
        let scene = &scenes[s];
        let base = seed::derive(options.seed, &[s as u64, r as u64]);
        let (prior, effective_demos) = match source {
            PriorSource::Uniform => (Prior::uniform(scene), None),
            PriorSource::Oracle => (Prior::oracle(scene), None),
            PriorSource::Lm { n_demos } => {
                let lm = build_prior(
                    scene,
                    table,
                    n_demos,
                    backend.expect("checked"),
                    seed::derive(base, &[1]),
                )?;
                (lm.prior, Some(lm.effective_demos))
            }
        };
        Ok(Outcome {
            episode: run_episode(scene, &prior, seed::derive(base, &[0]))?,
            effective_demos,
        })
    };
    let outcomes: Vec<Outcome> = if options.jobs <= 1 {
        jobs.iter().map(play).collect::<Result<_>>()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(options.jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(|| jobs.par_iter().map(play).collect::<Result<_>>())?
    };

    let score_of = |s: usize, r: usize| outcomes[s * options.runs + r].episode.normalized_score;
    let per_run: Vec<f64> = (0..options.runs)
        .map(|r| (0..scenes.len()).map(|s| score_of(s, r)).sum::<f64>() / scenes.len() as f64)
        .collect();
    let per_scene = scenes
        .iter()
        .enumerate()
        .map(|(s, scene)| {
            let scores: Vec<f64> = (0..options.runs).map(|r| score_of(s, r)).collect();
            (scene.id.clone(), Stat::of(&scores))
        })
        .collect();
    Ok(AgentReport {
        prior: source,
        score: Stat::of(&per_run),
        per_scene,
        mean_steps: outcomes.iter().map(|o| o.episode.steps_used as f64).sum::<f64>()
            / outcomes.len() as f64,
        effective_demos: outcomes.iter().filter_map(|o| o.effective_demos).min(),
        runs: options.runs,
        seed: options.seed,
        backend_id: backend.map(|b| b.descriptor().backend_id.clone()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene(objects: &[&str], locations: &[&str], gold: &[(&str, &str)], budget: usize) -> Scene {
        Scene::new(
            "test",
            objects.iter().map(|s| s.to_string()).collect(),
            locations.iter().map(|s| s.to_string()).collect(),
            gold.iter().map(|(o, l)| (o.to_string(), l.to_string())).collect(),
            budget,
        )
        .unwrap()
    }

    #[test]
    fn scene_validation() {
        let err = Scene::new(
            "s",
            vec!["milk".into()],
            vec!["fridge".into()],
            [("milk".to_string(), "sink".to_string())].into(),
            5,
        );
        assert!(err.is_err());
    }

    #[test]
    fn oracle_takes_two_steps_per_object() {
        let s = scene(&["a", "b", "c"], &["x", "y"], &[("a", "x"), ("b", "y"), ("c", "x")], 100);
        let r = run_episode(&s, &Prior::oracle(&s), 7).unwrap();
        assert_eq!(r.normalized_score, 1.0);
        assert_eq!(r.steps_used, 6);
    }

    #[test]
    fn zero_budget_scores_zero() {
        let s = scene(&["a"], &["x"], &[("a", "x")], 0);
        let r = run_episode(&s, &Prior::uniform(&s), 0).unwrap();
        assert_eq!(r.normalized_score, 0.0);
        assert_eq!(r.steps_used, 0);
    }

    #[test]
    fn wrong_guess_is_never_repeated() {
        let s = scene(&["a"], &["x", "y", "z", "w"], &[("a", "w")], 1000);
        for seed in 0..50 {
            let r = run_episode(&s, &Prior::uniform(&s), seed).unwrap();
            assert_eq!(r.normalized_score, 1.0);
            let tried: BTreeSet<_> = r.placement_log.iter().map(|p| p.location.clone()).collect();
            assert_eq!(tried.len(), r.placement_log.len());
            assert!(r.placement_attempts() <= 4);
        }
    }

    #[test]
    fn renormalize_keeps_ratios() {
        let s = scene(&["a"], &["x", "y", "z"], &[("a", "z")], 10);
        let mut p = Prior::from_rows(s.objects.clone(), s.locations.clone(), vec![vec![0.5, 0.3, 0.2]]).unwrap();
        assert!(p.zero_and_renormalize(0, 0));
        assert!((p.row(0)[1] - 0.6).abs() < 1e-12);
        assert!((p.row(0)[2] - 0.4).abs() < 1e-12);
        assert!(p.zero_and_renormalize(0, 1));
        assert!(!p.zero_and_renormalize(0, 2));
    }

    #[test]
    fn prior_source_parsing() {
        assert_eq!("lm:5".parse::<PriorSource>().unwrap(), PriorSource::Lm { n_demos: 5 });
        assert_eq!("oracle".parse::<PriorSource>().unwrap(), PriorSource::Oracle);
        assert!("lm:x".parse::<PriorSource>().is_err());
        assert_eq!(PriorSource::Lm { n_demos: 3 }.to_string(), "lm:3");
    }

    #[test]
    fn oracle_agent_has_zero_spread() {
        let s = scene(&["a", "b"], &["x", "y"], &[("a", "x"), ("b", "y")], 10);
        let r = evaluate_agent(&[s], PriorSource::Oracle, None, &BTreeMap::new(), &AgentOptions::default())
            .unwrap();
        assert_eq!(r.score, Stat { mean: 1.0, stddev: 0.0 });
    }
}
