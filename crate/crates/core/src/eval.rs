//! Probe runs and metrics.
//!
//! P@k is macro-averaged: a success rate per relation, then the unweighted
//! mean over relations. MRR and mean gold probability are averaged the same
//! way. A gold token outside the retrieved window has reciprocal rank 0 and
//! probability 0.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, FactTriple, RelationTemplate, TemplateStyle};
use crate::error::{Error, Result};
use crate::prompt::{assemble_prompt, PromptOptions, PromptString, Separator};
use crate::sampler::{
    default_k_pool, sample_random, select_close, Demonstrations, EmbeddingStore, EmbeddingVector,
    ExamplePool, SelectOptions,
};
use crate::scorer::{fill_mask_all, top_k, BatchOptions, PredictionSet, ScoreDistribution, Scorer};
use crate::seed;

/// Outcome of scoring one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub query: FactTriple,
    pub prediction: PredictionSet,
    /// 1-based rank of the gold object within the retrieved window.
    pub gold_rank: Option<usize>,
    pub gold_prob: f64,
    /// Positions of the demonstrations in the relation's fact list.
    pub demo_ids: Vec<usize>,
    pub prompt_digest: String,
}

impl TrialResult {
    pub fn from_distribution(
        query: &FactTriple,
        demo_ids: Vec<usize>,
        dist: &ScoreDistribution,
        k: usize,
    ) -> Self {
        TrialResult {
            query: query.clone(),
            prediction: top_k(dist, k),
            gold_rank: dist.rank(&query.object),
            gold_prob: dist.prob(&query.object),
            demo_ids,
            prompt_digest: dist.prompt_digest().to_string(),
        }
    }

    pub fn success_at(&self, k: usize) -> bool {
        self.gold_rank.is_some_and(|r| r <= k)
    }

    pub fn reciprocal_rank(&self) -> f64 {
        self.gold_rank.map_or(0.0, |r| 1.0 / r as f64)
    }
}

/// Assemble, score and record a single query.
pub fn evaluate_triple(
    query: &FactTriple,
    demos: &Demonstrations,
    template: &RelationTemplate,
    backend: &dyn Scorer,
    k: usize,
    separator: Separator,
) -> Result<TrialResult> {
    let options = PromptOptions::new(backend.descriptor().mask_token.clone()).with_separator(separator);
    let wrap = |e: Error| e.for_query(&query.subject, &query.relation_id);
    let prompt = assemble_prompt(query, &demos.facts, template, &options).map_err(wrap)?;
    let dist = crate::scorer::fill_mask(backend, &prompt, None).map_err(wrap)?;
    Ok(TrialResult::from_distribution(query, demos.indices.clone(), &dist, k))
}

/// Relation id → results in dataset order.
pub type RelationResults = BTreeMap<String, Vec<TrialResult>>;

fn macro_mean<F>(results: &RelationResults, per_trial: F) -> Result<f64>
where
    F: Fn(&TrialResult) -> Result<BigRational>,
{
    if results.is_empty() {
        return Err(Error::Metric("no relations".into()));
    }
    // exact rational accumulation, rounded once at the end
    let mut total = BigRational::zero();
    for (relation, trials) in results {
        if trials.is_empty() {
            return Err(Error::Metric(format!("relation {relation} has no results")));
        }
        let mut sum = BigRational::zero();
        for t in trials {
            sum += per_trial(t)?;
        }
        total += sum / BigRational::from_integer(BigInt::from(trials.len()));
    }
    let mean = total / BigRational::from_integer(BigInt::from(results.len()));
    mean.to_f64()
        .ok_or_else(|| Error::Metric("mean is not representable".into()))
}

fn integer(n: usize) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

/// Macro-averaged precision at k.
pub fn precision_at_k(results: &RelationResults, k: usize) -> Result<f64> {
    macro_mean(results, |t| Ok(integer(t.success_at(k) as usize)))
}

pub fn mean_reciprocal_rank(results: &RelationResults) -> Result<f64> {
    macro_mean(results, |t| {
        Ok(t.gold_rank
            .map_or_else(BigRational::zero, |r| BigRational::new(BigInt::from(1), BigInt::from(r))))
    })
}

pub fn mean_gold_probability(results: &RelationResults) -> Result<f64> {
    macro_mean(results, |t| {
        BigRational::from_float(t.gold_prob)
            .ok_or_else(|| Error::Metric(format!("gold probability {} is not finite", t.gold_prob)))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub p_at_k: BTreeMap<usize, f64>,
    pub mrr: f64,
    pub mean_gold_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationMetrics {
    pub metrics: Metrics,
    pub n_facts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub per_relation: BTreeMap<String, RelationMetrics>,
    pub aggregate: Metrics,
}

/// Per-relation and macro-averaged metrics for one trial.
pub fn aggregate_metrics(results: &RelationResults, k_list: &[usize]) -> Result<MetricSet> {
    let mut per_relation = BTreeMap::new();
    for (relation, trials) in results {
        let single: RelationResults = [(relation.clone(), trials.clone())].into();
        let p_at_k = k_list
            .iter()
            .map(|&k| Ok((k, precision_at_k(&single, k)?)))
            .collect::<Result<_>>()?;
        per_relation.insert(
            relation.clone(),
            RelationMetrics {
                metrics: Metrics {
                    p_at_k,
                    mrr: mean_reciprocal_rank(&single)?,
                    mean_gold_prob: mean_gold_probability(&single)?,
                },
                n_facts: trials.len(),
            },
        );
    }
    let aggregate = Metrics {
        p_at_k: k_list
            .iter()
            .map(|&k| Ok((k, precision_at_k(results, k)?)))
            .collect::<Result<_>>()?,
        mrr: mean_reciprocal_rank(results)?,
        mean_gold_prob: mean_gold_probability(results)?,
    };
    Ok(MetricSet {
        per_relation,
        aggregate,
    })
}

/// Mean and population standard deviation across trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub stddev: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        if values.is_empty() {
            return Stat { mean: 0.0, stddev: 0.0 };
        }
        // identical trials must report exactly zero spread
        if values.iter().all(|v| *v == values[0]) {
            return Stat { mean: values[0], stddev: 0.0 };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Stat {
            mean,
            stddev: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Selection {
    Random,
    /// Sample from the `k_pool` nearest subjects; `None` uses [`default_k_pool`].
    Close { k_pool: Option<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub n_demos: usize,
    pub selection: Selection,
    pub template_style: TemplateStyle,
    pub k_list: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub separator: Separator,
    /// Reuse the first trial's demonstrations in every trial.
    pub fixed_demos: bool,
    pub select: SelectOptions,
    pub batch: BatchOptions,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            n_demos: 0,
            selection: Selection::Random,
            template_style: TemplateStyle::NaturalLanguage,
            k_list: vec![1, 10, 100],
            trials: 1,
            seed: 0,
            separator: Separator::Space,
            fixed_demos: false,
            select: SelectOptions::default(),
            batch: BatchOptions::default(),
        }
    }
}

impl ProbeConfig {
    pub fn resolved_k_pool(&self) -> Option<usize> {
        match self.selection {
            Selection::Random => None,
            Selection::Close { k_pool } => Some(k_pool.unwrap_or_else(|| default_k_pool(self.n_demos))),
        }
    }

    /// Seeds of each trial: `seed + trial_index`.
    pub fn trial_seeds(&self) -> Vec<u64> {
        (0..self.trials as u64).map(|t| self.seed.wrapping_add(t)).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.k_list.is_empty() || self.k_list.contains(&0) {
            return Err(Error::Config("k list must be non-empty and positive".into()));
        }
        if let Some(k_pool) = self.resolved_k_pool() {
            if k_pool < self.n_demos {
                return Err(Error::Config(format!(
                    "k_pool {k_pool} smaller than n_demos {}",
                    self.n_demos
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub dataset: String,
    pub backend_id: String,
    pub probe: ProbeConfig,
    pub k_pool: Option<usize>,
    pub seeds: Vec<u64>,
    /// Command-line configuration, when run from the CLI.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationSummary {
    pub p_at_k: BTreeMap<usize, Stat>,
    pub mrr: Stat,
    pub mean_gold_prob: Stat,
    pub n_facts: usize,
    /// Fewest demonstrations any query actually received.
    pub effective_demos: usize,
    /// Queries that received fewer demonstrations than requested.
    pub shortfall_queries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateSummary {
    pub p_at_k: BTreeMap<usize, Stat>,
    pub mrr: Stat,
    pub mean_gold_prob: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub per_relation: BTreeMap<String, RelationSummary>,
    pub aggregate: AggregateSummary,
    pub trials: usize,
    pub config_snapshot: ConfigSnapshot,
}

/// A fully assembled query of one trial.
#[derive(Debug, Clone)]
pub struct QueryPrompt {
    pub query: FactTriple,
    pub query_index: usize,
    pub demos: Demonstrations,
    pub prompt: PromptString,
}

/// Prepared probe: templates resolved, pools (and embeddings) built.
pub struct Prober<'a> {
    dataset: Dataset,
    config: ProbeConfig,
    backend: &'a dyn Scorer,
    pools: BTreeMap<String, ExamplePool>,
    options: PromptOptions,
}

impl<'a> Prober<'a> {
    pub fn new(
        dataset: &Dataset,
        config: ProbeConfig,
        backend: &'a dyn Scorer,
        store: &EmbeddingStore,
    ) -> Result<Self> {
        config.validate()?;
        let dataset = dataset.restyled(config.template_style)?;
        let needs_embeddings = config.n_demos > 0 && matches!(config.selection, Selection::Close { .. });
        let mut pools = BTreeMap::new();
        for (relation, facts) in dataset.relations() {
            let mut pool = ExamplePool::new(relation.clone(), facts.clone());
            if needs_embeddings {
                let subjects: Vec<String> = facts.iter().map(|f| f.subject.clone()).collect();
                pool = pool.with_embeddings(store.embed_all(backend, &subjects, &config.batch)?)?;
            }
            pools.insert(relation.clone(), pool);
        }
        let options = PromptOptions::new(backend.descriptor().mask_token.clone())
            .with_separator(config.separator);
        Ok(Prober {
            dataset,
            config,
            backend,
            pools,
            options,
        })
    }

    pub fn config(&self) -> &ProbeConfig {
        &self.config
    }

    fn demonstrations(&self, relation: &str, index: usize, trial_seed: u64) -> Result<Demonstrations> {
        let n = self.config.n_demos;
        if n == 0 {
            return Ok(Demonstrations::default());
        }
        let pool = &self.pools[relation];
        let query = &pool.candidates[index];
        let stream = seed::derive(trial_seed, &[seed::label(relation), index as u64]);
        match self.config.selection {
            Selection::Random => sample_random(pool, n, query, stream, &self.config.select),
            Selection::Close { .. } => {
                let embeddings: &[EmbeddingVector] = pool.embeddings().expect("embedded pool");
                select_close(
                    query,
                    &embeddings[index],
                    pool,
                    n,
                    self.config.resolved_k_pool().expect("close selection"),
                    stream,
                    &self.config.select,
                )
            }
        }
    }

    fn sampling_seed(&self, trial: usize) -> u64 {
        let seeds = self.config.trial_seeds();
        if self.config.fixed_demos {
            seeds[0]
        } else {
            seeds[trial]
        }
    }

    /// Every query of `trial` with its demonstrations and prompt, in dataset order.
    pub fn prompts(&self, trial: usize) -> Result<Vec<QueryPrompt>> {
        let trial_seed = self.sampling_seed(trial);
        let mut out = Vec::with_capacity(self.dataset.fact_count());
        for (relation, facts) in self.dataset.relations() {
            let template = self.dataset.template(relation).expect("dataset invariant");
            for (index, query) in facts.iter().enumerate() {
                let wrap = |e: Error| e.for_query(&query.subject, relation);
                let demos = self.demonstrations(relation, index, trial_seed).map_err(wrap)?;
                let prompt = assemble_prompt(query, &demos.facts, template, &self.options).map_err(wrap)?;
                out.push(QueryPrompt {
                    query: query.clone(),
                    query_index: index,
                    demos,
                    prompt,
                });
            }
        }
        Ok(out)
    }

    fn score(&self, prompts: &[QueryPrompt]) -> Result<Vec<ScoreDistribution>> {
        let texts: Vec<String> = prompts.iter().map(|p| p.prompt.text.clone()).collect();
        match fill_mask_all(self.backend, &texts, None, &self.config.batch) {
            Ok(d) => Ok(d),
            Err(batch_err) => {
                // find the offending query so the error names it
                for p in prompts {
                    self.backend
                        .fill_mask_batch(std::slice::from_ref(&p.prompt.text), None)
                        .map_err(|e| e.for_query(&p.query.subject, &p.query.relation_id))?;
                }
                Err(batch_err)
            }
        }
    }

    /// Score one trial.
    pub fn run_trial(&self, trial: usize) -> Result<(RelationResults, Vec<QueryPrompt>)> {
        let prompts = self.prompts(trial)?;
        let dists = self.score(&prompts)?;
        let k_max = *self.config.k_list.iter().max().expect("validated");
        let mut results = RelationResults::new();
        for (p, dist) in prompts.iter().zip(&dists) {
            results
                .entry(p.query.relation_id.clone())
                .or_default()
                .push(TrialResult::from_distribution(&p.query, p.demos.indices.clone(), dist, k_max));
        }
        Ok((results, prompts))
    }

    /// Run every trial and summarize.
    pub fn run(&self) -> Result<ProbeReport> {
        let deterministic = self.config.n_demos == 0 || self.config.fixed_demos;
        let mut sets: Vec<MetricSet> = Vec::with_capacity(self.config.trials);
        let mut shortfalls: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        for trial in 0..self.config.trials {
            if deterministic && trial > 0 {
                sets.push(sets[0].clone());
                continue;
            }
            let (results, prompts) = self.run_trial(trial)?;
            for p in &prompts {
                let e = shortfalls
                    .entry(p.query.relation_id.clone())
                    .or_insert((usize::MAX, 0));
                e.0 = e.0.min(p.demos.facts.len());
                if p.demos.shortfall > 0 {
                    e.1 += 1;
                }
            }
            sets.push(aggregate_metrics(&results, &self.config.k_list)?);
        }
        if deterministic {
            for e in shortfalls.values_mut() {
                e.1 *= self.config.trials;
            }
        }
        Ok(summarize(&sets, &shortfalls, self.snapshot()))
    }

    fn snapshot(&self) -> ConfigSnapshot {
        ConfigSnapshot {
            dataset: self.dataset.name.clone(),
            backend_id: self.backend.descriptor().backend_id.clone(),
            probe: self.config.clone(),
            k_pool: self.config.resolved_k_pool(),
            seeds: self.config.trial_seeds(),
            run: None,
        }
    }
}

fn summarize(
    sets: &[MetricSet],
    shortfalls: &BTreeMap<String, (usize, usize)>,
    snapshot: ConfigSnapshot,
) -> ProbeReport {
    let first = &sets[0];
    let ks: Vec<usize> = first.aggregate.p_at_k.keys().copied().collect();
    let stat = |f: &dyn Fn(&MetricSet) -> f64| Stat::of(&sets.iter().map(f).collect::<Vec<_>>());

    let mut per_relation = BTreeMap::new();
    for (relation, rm) in &first.per_relation {
        let rel = |s: &MetricSet| s.per_relation[relation].metrics.clone();
        let (effective, short) = shortfalls.get(relation).copied().unwrap_or((0, 0));
        per_relation.insert(
            relation.clone(),
            RelationSummary {
                p_at_k: ks
                    .iter()
                    .map(|&k| (k, stat(&|s| rel(s).p_at_k[&k])))
                    .collect(),
                mrr: stat(&|s| rel(s).mrr),
                mean_gold_prob: stat(&|s| rel(s).mean_gold_prob),
                n_facts: rm.n_facts,
                effective_demos: if effective == usize::MAX { 0 } else { effective },
                shortfall_queries: short,
            },
        );
    }

    // aggregate means are the unweighted mean of the per-relation means
    let n_rel = per_relation.len() as f64;
    let macro_of = |f: &dyn Fn(&RelationSummary) -> f64| per_relation.values().map(f).sum::<f64>() / n_rel;
    let aggregate = AggregateSummary {
        p_at_k: ks
            .iter()
            .map(|&k| {
                let spread = stat(&|s| s.aggregate.p_at_k[&k]);
                (
                    k,
                    Stat {
                        mean: macro_of(&|r| r.p_at_k[&k].mean),
                        stddev: spread.stddev,
                    },
                )
            })
            .collect(),
        mrr: Stat {
            mean: macro_of(&|r| r.mrr.mean),
            stddev: stat(&|s| s.aggregate.mrr).stddev,
        },
        mean_gold_prob: Stat {
            mean: macro_of(&|r| r.mean_gold_prob.mean),
            stddev: stat(&|s| s.aggregate.mean_gold_prob).stddev,
        },
    };
    ProbeReport {
        per_relation,
        aggregate,
        trials: sets.len(),
        config_snapshot: snapshot,
    }
}

/// Run a probe over a single-token-filtered dataset.
pub fn run_probe(
    dataset: &Dataset,
    config: &ProbeConfig,
    backend: &dyn Scorer,
    store: &EmbeddingStore,
) -> Result<ProbeReport> {
    Prober::new(dataset, config.clone(), backend, store)?.run()
}

/// One report per demonstration count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub points: Vec<(usize, ProbeReport)>,
}

/// Probe at every count in `n_list` (sorted, duplicates removed).
pub fn run_sweep(
    dataset: &Dataset,
    config: &ProbeConfig,
    n_list: &[usize],
    backend: &dyn Scorer,
    store: &EmbeddingStore,
) -> Result<Sweep> {
    let mut ns = n_list.to_vec();
    ns.sort_unstable();
    ns.dedup();
    if ns.is_empty() {
        return Err(Error::Config("empty sweep grid".into()));
    }
    let points = ns
        .into_iter()
        .map(|n| {
            let cfg = ProbeConfig {
                n_demos: n,
                ..config.clone()
            };
            Ok((n, run_probe(dataset, &cfg, backend, store)?))
        })
        .collect::<Result<_>>()?;
    Ok(Sweep { points })
}

impl Sweep {
    /// Aggregate P@k over the grid as a plottable curve.
    pub fn p_at_k_curve(&self, k: usize, label: &str) -> Result<crate::report::CurveSeries> {
        let mut x = Vec::new();
        let mut y = Vec::new();
        let mut yerr = Vec::new();
        for (n, report) in &self.points {
            let stat = report
                .aggregate
                .p_at_k
                .get(&k)
                .ok_or_else(|| Error::Config(format!("k={k} not in the probe's k list")))?;
            x.push(*n);
            y.push(stat.mean);
            yerr.push(stat.stddev);
        }
        crate::report::CurveSeries::new(label, x, y, yerr)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub relation_id: String,
    /// `a − b` of mean P@k, per k.
    pub delta_p_at_k: BTreeMap<usize, f64>,
}

/// Per-relation P@k differences `a − b`, largest gain (at the smallest k) first.
pub fn delta_report(a: &ProbeReport, b: &ProbeReport) -> Result<Vec<DeltaRow>> {
    if a.per_relation.keys().ne(b.per_relation.keys()) {
        return Err(Error::Config("reports cover different relations".into()));
    }
    if a.config_snapshot.probe.k_list != b.config_snapshot.probe.k_list {
        return Err(Error::Config("reports use different k lists".into()));
    }
    let mut rows: Vec<DeltaRow> = a
        .per_relation
        .iter()
        .map(|(relation, ra)| {
            let rb = &b.per_relation[relation];
            DeltaRow {
                relation_id: relation.clone(),
                delta_p_at_k: ra
                    .p_at_k
                    .iter()
                    .map(|(k, s)| (*k, s.mean - rb.p_at_k[k].mean))
                    .collect(),
            }
        })
        .collect();
    let key_k = a.config_snapshot.probe.k_list.iter().min().copied().unwrap_or(1);
    rows.sort_by(|x, y| {
        y.delta_p_at_k[&key_k]
            .total_cmp(&x.delta_p_at_k[&key_k])
            .then_with(|| x.relation_id.cmp(&y.relation_id))
    });
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorer::{Coverage, TokenProb};

    fn result(rank: Option<usize>, prob: f64) -> TrialResult {
        TrialResult {
            query: FactTriple::new("s", "r", "o").unwrap(),
            prediction: PredictionSet { tokens: vec![] },
            gold_rank: rank,
            gold_prob: prob,
            demo_ids: vec![],
            prompt_digest: String::new(),
        }
    }

    fn hits(rel: &[(&str, &[bool])]) -> RelationResults {
        rel.iter()
            .map(|(r, h)| {
                (
                    r.to_string(),
                    h.iter().map(|&hit| result(if hit { Some(1) } else { None }, 0.0)).collect(),
                )
            })
            .collect()
    }

    #[test]
    fn single_relation_half() {
        assert_eq!(precision_at_k(&hits(&[("a", &[true, false])]), 1).unwrap(), 0.5);
    }

    #[test]
    fn macro_not_micro() {
        let r = hits(&[("a", &[true]), ("b", &[true, false, false])]);
        let p = precision_at_k(&r, 1).unwrap();
        assert!((p - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_inputs_are_errors() {
        assert!(precision_at_k(&RelationResults::new(), 1).is_err());
        assert!(precision_at_k(&hits(&[("a", &[])]), 1).is_err());
    }

    #[test]
    fn reciprocal_rank_conventions() {
        let r: RelationResults = [("a".to_string(), vec![result(Some(3), 0.1)])].into();
        assert!((mean_reciprocal_rank(&r).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let absent: RelationResults = [("a".to_string(), vec![result(None, 0.0)])].into();
        assert_eq!(mean_reciprocal_rank(&absent).unwrap(), 0.0);
    }

    #[test]
    fn gold_excluded_by_restriction() {
        let q = FactTriple::new("s", "r", "gold").unwrap();
        let d = crate::scorer::ScoreDistribution::new(
            "p",
            vec![TokenProb { token: "x".into(), prob: 1.0 }],
            Coverage::Full,
        )
        .unwrap()
        .restricted(&["x".to_string()]);
        let t = TrialResult::from_distribution(&q, vec![], &d, 1);
        assert_eq!(t.gold_rank, None);
        assert_eq!(t.gold_prob, 0.0);
        assert!(!t.success_at(1));
    }

    #[test]
    fn stat_population_stddev() {
        let s = Stat::of(&[1.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.stddev, 1.0);
        assert_eq!(Stat::of(&[0.25]).stddev, 0.0);
        let same = Stat::of(&[0.0015921837; 3]);
        assert_eq!(same, Stat { mean: 0.0015921837, stddev: 0.0 });
    }
}
