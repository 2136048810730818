//! Word-analogy evaluation on BATS-style data.
//!
//! Each relation is a list of (source, targets) pairs. A query pair is
//! prompted with other pairs of the same relation as demonstrations and
//! counts as solved when the top-1 token is any of its listed targets.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{is_single_token, FactTriple, RelationTemplate, SkipReport, TemplateStyle, Tokenizer, Vocabulary};
use crate::error::{Error, Result};
use crate::eval::Stat;
use crate::prompt::{assemble_prompt, PromptOptions, Separator};
use crate::sampler::{sample_random, ExamplePool, SelectOptions};
use crate::scorer::{fill_mask_all, BatchOptions, Scorer, ScorerTokenizer};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    InflectionalMorphology,
    DerivationalMorphology,
    LexicographicSemantics,
    EncyclopedicSemantics,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::InflectionalMorphology,
        Category::DerivationalMorphology,
        Category::LexicographicSemantics,
        Category::EncyclopedicSemantics,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::InflectionalMorphology => "inflectional_morphology",
            Category::DerivationalMorphology => "derivational_morphology",
            Category::LexicographicSemantics => "lexicographic_semantics",
            Category::EncyclopedicSemantics => "encyclopedic_semantics",
        }
    }

    /// Category of a BATS directory such as `1_Inflectional_morphology`.
    pub fn from_dir_name(name: &str) -> Option<Category> {
        let lower = name.to_lowercase();
        [
            ("inflectional", Category::InflectionalMorphology),
            ("derivational", Category::DerivationalMorphology),
            ("lexicographic", Category::LexicographicSemantics),
            ("encyclopedic", Category::EncyclopedicSemantics),
        ]
        .into_iter()
        .find(|(key, _)| lower.contains(key))
        .map(|(_, c)| c)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown analogy category {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalogyPair {
    pub source: String,
    /// Alternatives in file order; the first is used when rendering demonstrations.
    pub targets: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalogyRelation {
    pub category: Category,
    pub name: String,
    pub pairs: Vec<AnalogyPair>,
}

/// Parse `source<TAB>target[/alt...]`.
pub fn parse_pair(line: &str) -> std::result::Result<AnalogyPair, String> {
    let mut fields = line.split('\t');
    let (Some(source), Some(targets), None) = (fields.next(), fields.next(), fields.next()) else {
        return Err("expected exactly two tab-separated fields".into());
    };
    let source = source.trim();
    if source.is_empty() {
        return Err("empty source".into());
    }
    let mut alternatives: Vec<String> = Vec::new();
    for t in targets.split('/').map(str::trim).filter(|t| !t.is_empty()) {
        if !alternatives.iter().any(|a| a == t) {
            alternatives.push(t.to_string());
        }
    }
    if alternatives.is_empty() {
        return Err("no targets".into());
    }
    Ok(AnalogyPair {
        source: source.to_string(),
        targets: alternatives,
    })
}

#[derive(Debug, Clone)]
pub struct BatsLoad {
    pub relations: Vec<AnalogyRelation>,
    pub skipped: SkipReport,
}

/// Read a BATS tree: one subdirectory per category, one `.txt` file per relation.
pub fn load_bats(dir: &Path) -> Result<BatsLoad> {
    let mut skipped = SkipReport::default();
    let mut relations = Vec::new();
    let mut subdirs: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    for sub in subdirs {
        let dir_name = sub.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let Some(category) = Category::from_dir_name(&dir_name) else {
            log::warn!("{}: not a BATS category directory", sub.display());
            continue;
        };
        let mut files: Vec<_> = std::fs::read_dir(&sub)
            .map_err(|e| Error::io(&sub, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "txt"))
            .collect();
        files.sort();
        for file in files {
            let text = std::fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
            let source = file.display().to_string();
            let mut pairs = Vec::new();
            for (idx, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match parse_pair(line) {
                    Ok(p) => pairs.push(p),
                    Err(reason) => skipped.push(&source, idx + 1, reason),
                }
            }
            if pairs.is_empty() {
                skipped.push(&source, 0, "relation has no usable pairs");
                continue;
            }
            relations.push(AnalogyRelation {
                category,
                name: file.file_stem().unwrap_or_default().to_string_lossy().into_owned(),
                pairs,
            });
        }
    }
    if relations.is_empty() {
        return Err(Error::ZeroFacts(format!(
            "zero facts loaded: no analogy relations under {}",
            dir.display()
        )));
    }
    Ok(BatsLoad { relations, skipped })
}

pub fn is_solvable(pair: &AnalogyPair, vocab: &Vocabulary, tokenizer: &dyn Tokenizer) -> bool {
    pair.targets.iter().any(|t| is_single_token(t, vocab, tokenizer))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub solvable: usize,
    pub total: usize,
    pub fraction: f64,
    /// Highest P@1 each relation can reach: its solvable fraction.
    pub per_relation_cap: BTreeMap<String, f64>,
}

pub fn coverage(relations: &[AnalogyRelation], vocab: &Vocabulary, tokenizer: &dyn Tokenizer) -> CoverageReport {
    let mut solvable = 0;
    let mut total = 0;
    let mut per_relation_cap = BTreeMap::new();
    for r in relations {
        let s = r.pairs.iter().filter(|p| is_solvable(p, vocab, tokenizer)).count();
        solvable += s;
        total += r.pairs.len();
        per_relation_cap.insert(r.name.clone(), s as f64 / r.pairs.len() as f64);
    }
    CoverageReport {
        solvable,
        total,
        fraction: if total == 0 { 0.0 } else { solvable as f64 / total as f64 },
        per_relation_cap,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalogyConfig {
    pub n_demos: usize,
    pub template_style: TemplateStyle,
    pub solvable_only: bool,
    pub trials: usize,
    pub seed: u64,
    pub separator: Separator,
    pub batch: BatchOptions,
}

impl Default for AnalogyConfig {
    fn default() -> Self {
        AnalogyConfig {
            n_demos: 10,
            template_style: TemplateStyle::Semicolon,
            solvable_only: false,
            trials: 1,
            seed: 0,
            separator: Separator::Space,
            batch: BatchOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalogyRelationSummary {
    pub category: Category,
    pub p_at_1: Stat,
    /// Queries evaluated (solvable pairs only under `solvable_only`).
    pub n_pairs: usize,
    pub cap: f64,
    pub effective_demos: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalogyReport {
    pub per_relation: BTreeMap<String, AnalogyRelationSummary>,
    pub per_category: BTreeMap<Category, Stat>,
    pub overall: Stat,
    pub coverage: CoverageReport,
    pub config: AnalogyConfig,
    pub seeds: Vec<u64>,
    pub backend_id: String,
}

struct Query {
    relation: usize,
    pair: usize,
    prompt: String,
    demos: usize,
}

fn triple(relation: &str, pair: &AnalogyPair) -> Result<FactTriple> {
    FactTriple::new(pair.source.clone(), relation, pair.targets[0].clone())
}

/// Macro P@1 per relation, per category and overall.
pub fn evaluate_analogies(
    relations: &[AnalogyRelation],
    config: &AnalogyConfig,
    backend: &dyn Scorer,
) -> Result<AnalogyReport> {
    if config.trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    let template = match config.template_style.symbolic_surface() {
        Some(_) => RelationTemplate::symbolic("analogy", config.template_style)?,
        None => {
            return Err(Error::Config(
                "analogy relations have no natural-language templates".into(),
            ))
        }
    };
    let vocab = backend.descriptor().vocabulary.clone();
    let tokenizer = ScorerTokenizer(backend);
    let cov = coverage(relations, &vocab, &tokenizer);
    let options = PromptOptions::new(backend.descriptor().mask_token.clone()).with_separator(config.separator);

    let pools: Vec<ExamplePool> = relations
        .iter()
        .map(|r| {
            let facts = r.pairs.iter().map(|p| triple(&r.name, p)).collect::<Result<Vec<_>>>()?;
            Ok(ExamplePool::new(r.name.clone(), facts))
        })
        .collect::<Result<_>>()?;
    let queries_of = |r: &AnalogyRelation| -> Vec<usize> {
        (0..r.pairs.len())
            .filter(|&i| !config.solvable_only || is_solvable(&r.pairs[i], &vocab, &tokenizer))
            .collect()
    };
    let active: Vec<usize> = (0..relations.len())
        .filter(|&ri| !queries_of(&relations[ri]).is_empty())
        .collect();
    if active.is_empty() {
        return Err(Error::Metric("no analogy pairs to evaluate".into()));
    }

    let seeds: Vec<u64> = (0..config.trials as u64).map(|t| config.seed.wrapping_add(t)).collect();
    // per trial: relation index -> hit fraction
    let mut per_trial: Vec<BTreeMap<usize, f64>> = Vec::new();
    let mut effective: BTreeMap<usize, usize> = BTreeMap::new();
    for &trial_seed in &seeds {
        let mut queries = Vec::new();
        for &ri in &active {
            let r = &relations[ri];
            let pool = &pools[ri];
            for pi in queries_of(r) {
                let query = &pool.candidates[pi];
                let stream = seed::derive(trial_seed, &[seed::label(&r.name), pi as u64]);
                let demos = if config.n_demos == 0 {
                    Vec::new()
                } else {
                    sample_random(pool, config.n_demos, query, stream, &SelectOptions::default())?.facts
                };
                let prompt = assemble_prompt(query, &demos, &template, &options)
                    .map_err(|e| e.for_query(&query.subject, &r.name))?;
                queries.push(Query {
                    relation: ri,
                    pair: pi,
                    prompt: prompt.text,
                    demos: demos.len(),
                });
            }
        }
        let texts: Vec<String> = queries.iter().map(|q| q.prompt.clone()).collect();
        let dists = fill_mask_all(backend, &texts, None, &config.batch)?;
        let mut hits: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
        for (q, d) in queries.iter().zip(&dists) {
            let top = d.entries().first().filter(|e| e.prob > 0.0).map(|e| e.token.as_str());
            let ok = top.is_some_and(|t| relations[q.relation].pairs[q.pair].targets.iter().any(|x| x == t));
            let e = hits.entry(q.relation).or_insert((0, 0));
            e.0 += ok as usize;
            e.1 += 1;
            let eff = effective.entry(q.relation).or_insert(usize::MAX);
            *eff = (*eff).min(q.demos);
        }
        per_trial.push(hits.into_iter().map(|(ri, (h, n))| (ri, h as f64 / n as f64)).collect());
    }

    let mut per_relation = BTreeMap::new();
    for &ri in &active {
        let r = &relations[ri];
        let values: Vec<f64> = per_trial.iter().map(|t| t[&ri]).collect();
        per_relation.insert(
            r.name.clone(),
            AnalogyRelationSummary {
                category: r.category,
                p_at_1: Stat::of(&values),
                n_pairs: queries_of(r).len(),
                cap: cov.per_relation_cap[&r.name],
                effective_demos: effective[&ri],
            },
        );
    }
    let macro_stat = |members: &[usize]| -> Stat {
        let trial_means: Vec<f64> = per_trial
            .iter()
            .map(|t| members.iter().map(|ri| t[ri]).sum::<f64>() / members.len() as f64)
            .collect();
        let mean = members
            .iter()
            .map(|&ri| per_relation[&relations[ri].name].p_at_1.mean)
            .sum::<f64>()
            / members.len() as f64;
        Stat {
            mean,
            stddev: Stat::of(&trial_means).stddev,
        }
    };
    let mut per_category = BTreeMap::new();
    for c in Category::ALL {
        let members: Vec<usize> = active.iter().copied().filter(|&ri| relations[ri].category == c).collect();
        if !members.is_empty() {
            per_category.insert(c, macro_stat(&members));
        }
    }
    let overall = macro_stat(&active);
    Ok(AnalogyReport {
        per_relation,
        per_category,
        overall,
        coverage: cov,
        config: config.clone(),
        seeds,
        backend_id: backend.descriptor().backend_id.clone(),
    })
}

/// Rows keyed by (category, relation, n_demos); category rows use relation `ALL`.
pub fn analogy_csv(reports: &[AnalogyReport]) -> Result<String> {
    let err = |e: csv::Error| Error::parse("csv", e.to_string());
    let num = |x: f64| crate::report::round6(x).to_string();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["category", "relation", "n_demos", "p_at_1", "stddev", "n_pairs", "cap"])
        .map_err(err)?;
    for r in reports {
        let n = r.config.n_demos.to_string();
        for (name, s) in &r.per_relation {
            w.write_record([
                s.category.as_str(),
                name,
                &n,
                &num(s.p_at_1.mean),
                &num(s.p_at_1.stddev),
                &s.n_pairs.to_string(),
                &num(s.cap),
            ])
            .map_err(err)?;
        }
        for (c, s) in &r.per_category {
            w.write_record([c.as_str(), crate::report::ALL_RELATIONS, &n, &num(s.mean), &num(s.stddev), "", ""])
                .map_err(err)?;
        }
        w.write_record(["ALL", crate::report::ALL_RELATIONS, &n, &num(r.overall.mean), &num(r.overall.stddev), "", ""])
            .map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::parse("csv", e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
