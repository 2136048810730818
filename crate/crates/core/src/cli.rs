//! Command-line front end.
//!
//! Every subcommand writes deterministic files under `--out`. The full
//! parsed command line (minus output and cache locations) is embedded in
//! each report so runs can be compared and repeated.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::analogy::{analogy_csv, evaluate_analogies, load_bats, AnalogyConfig, AnalogyRelation};
use crate::corpus::{
    dataset_stats, filter_single_token_objects, load_corpus, load_templates, load_vocabulary, Dataset,
    RelationTemplate, TemplateStyle,
};
use crate::error::{Error, Result};
use crate::eval::{run_sweep, ProbeConfig, Prober, Selection};
use crate::prompt::Separator;
use crate::report::{curves_csv, embeddings_csv, report_csv, write_json, write_text, CurveSeries, EmbeddingRow};
use crate::sampler::{EmbeddingStore, SelectOptions};
use crate::scorer::{
    embed_all, filler_tokens, BatchOptions, CachedScorer, HttpOptions, HttpScorer, Scorer, ScorerTokenizer,
    ScriptedBackend, ScriptedConfig,
};
use crate::twc::{evaluate_agent, load_object_table, load_scenes, AgentOptions, PriorSource, Scene};

/// Backend value selecting the built-in deterministic backend.
pub const SCRIPTED: &str = "scripted";

#[derive(Debug, Parser, Serialize)]
#[command(name = "lmprobe", version, about = "Probe masked language models with in-context demonstrations")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GlobalArgs {
    /// Model-server base URL, or `scripted`.
    #[arg(long, global = true, env = "LMPROBE_BACKEND_URL", default_value = SCRIPTED)]
    pub backend: String,
    /// Root of all randomness.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Persistent response cache.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub cache_dir: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "lmprobe-out")]
    #[serde(skip)]
    pub out: PathBuf,
    /// Concurrent backend requests.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, global = true, default_value_t = 32)]
    pub batch_size: usize,
    /// Extra tokens (one per line) for the scripted vocabulary.
    #[arg(long, global = true)]
    pub vocab: Option<PathBuf>,
    /// Filler tokens added to the scripted vocabulary.
    #[arg(long, global = true, default_value_t = 200)]
    pub filler: usize,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Fact and relation counts of a corpus.
    Stats(StatsArgs),
    /// Probe at one demonstration count.
    Probe(ProbeArgs),
    /// Probe over a grid of demonstration counts.
    Sweep(SweepArgs),
    /// BATS analogy evaluation.
    Analogy(AnalogyArgs),
    /// Room-tidying agent with uniform, oracle or LM priors.
    Twc(TwcArgs),
    /// Export prompt embeddings as CSV.
    EmbedExport(ProbeArgs),
    /// Print the prompts of one trial, one per line.
    DumpPrompts(DumpArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CorpusArgs {
    /// Facts file or directory of `*.jsonl` files.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Relation templates; symbolic templates are used without it.
    #[arg(long)]
    pub templates: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct StatsArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Apply the single-token object filter of the backend vocabulary.
    #[arg(long)]
    pub filter: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionKind {
    Random,
    Close,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ProbeOptions {
    #[arg(long, value_enum, default_value_t = SelectionKind::Random)]
    pub selection: SelectionKind,
    /// Nearest-neighbour subset size for close selection.
    #[arg(long)]
    pub k_pool: Option<usize>,
    /// nl, arrow-double, arrow-single or semicolon.
    #[arg(long, default_value = "nl")]
    pub template_style: TemplateStyle,
    #[arg(long, value_delimiter = ',', default_value = "1,10,100")]
    pub k: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
    /// space or newline.
    #[arg(long, default_value = "space")]
    pub separator: Separator,
    /// Same demonstrations in every trial.
    #[arg(long)]
    pub fixed_demos: bool,
    /// Never show a demonstration with the query's object.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ProbeArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub options: ProbeOptions,
    #[arg(long, default_value_t = 0)]
    pub n_demos: usize,
    /// Also write the first trial's prompts here.
    #[arg(long)]
    #[serde(skip)]
    pub dump_prompts: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SweepArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub options: ProbeOptions,
    #[arg(long, value_delimiter = ',', default_value = "0,1,3,5,10,15,20")]
    pub n_demos: Vec<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DumpArgs {
    #[command(flatten)]
    pub probe: ProbeArgs,
    #[arg(long, default_value_t = 0)]
    pub trial: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AnalogyArgs {
    /// BATS root directory.
    #[arg(long)]
    pub bats: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,1,3,5,10,15,20")]
    pub n_demos: Vec<usize>,
    /// Only score pairs with a single-token target.
    #[arg(long)]
    pub solvable_only: bool,
    #[arg(long, default_value = "semicolon")]
    pub template_style: TemplateStyle,
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
    #[arg(long, default_value = "space")]
    pub separator: Separator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorKind {
    Uniform,
    Oracle,
    Lm,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TwcArgs {
    /// Scene file or directory of scene files.
    #[arg(long)]
    pub scenes: PathBuf,
    /// Global object → location table.
    #[arg(long)]
    pub objects: PathBuf,
    #[arg(long, value_enum, default_value_t = PriorKind::Lm)]
    pub prior: PriorKind,
    /// Demonstration counts swept for the LM prior.
    #[arg(long, value_delimiter = ',', default_value = "0,1,3,5,10,15,20")]
    pub n_demos: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub runs: usize,
}

/// Facts to plant in the scripted backend.
enum Plant<'a> {
    Dataset(&'a Dataset),
    Analogy(&'a [AnalogyRelation], TemplateStyle),
    Twc(&'a [Scene], &'a BTreeMap<String, String>),
}

struct Backend {
    scorer: Box<dyn Scorer>,
    store: EmbeddingStore,
}

fn cached<S: Scorer + 'static>(inner: S, dir: Option<&Path>) -> Result<Box<dyn Scorer>> {
    Ok(match dir {
        Some(d) => Box::new(CachedScorer::open(inner, d)?),
        None => Box::new(CachedScorer::in_memory(inner)),
    })
}

fn words(text: &str, into: &mut BTreeSet<String>) {
    into.extend(text.split_whitespace().map(str::to_string));
}

fn open_backend(g: &GlobalArgs, plant: Plant<'_>) -> Result<Backend> {
    let scorer = if g.backend == SCRIPTED {
        let mut tokens = BTreeSet::new();
        let mut config = ScriptedConfig::new(Vec::<String>::new()).with_seed(g.seed);
        match plant {
            Plant::Dataset(d) => {
                d.facts().for_each(|f| words(&f.object, &mut tokens));
                config.plant_dataset(d);
            }
            Plant::Analogy(relations, style) => {
                let template = RelationTemplate::symbolic("analogy", style)?;
                for r in relations {
                    for p in &r.pairs {
                        p.targets.iter().for_each(|t| words(t, &mut tokens));
                        config.plant(&template, &p.source, &p.targets[0]);
                    }
                }
            }
            Plant::Twc(scenes, table) => {
                let template = RelationTemplate::symbolic("location", TemplateStyle::ArrowDouble)?;
                let mut planted = BTreeMap::new();
                planted.extend(table.iter());
                scenes.iter().for_each(|s| planted.extend(s.gold.iter()));
                for s in scenes {
                    s.locations.iter().for_each(|l| words(l, &mut tokens));
                }
                for (object, location) in planted {
                    words(location, &mut tokens);
                    config.plant(&template, object, location);
                }
            }
        }
        if let Some(path) = &g.vocab {
            let extra = load_vocabulary(path, &config.mask_token, true)?;
            tokens.extend(extra.predictable().map(str::to_string));
        }
        tokens.extend(filler_tokens(g.filler));
        config.tokens = tokens.into_iter().collect();
        cached(ScriptedBackend::new(config)?, g.cache_dir.as_deref())?
    } else {
        let options = HttpOptions {
            batch_size: g.batch_size,
            ..HttpOptions::default()
        };
        cached(HttpScorer::connect(&g.backend, options)?, g.cache_dir.as_deref())?
    };
    let store = match &g.cache_dir {
        Some(d) => EmbeddingStore::open(&d.join("embeddings.jsonl"))?,
        None => EmbeddingStore::in_memory(),
    };
    log::info!("backend {}", scorer.descriptor().backend_id);
    Ok(Backend { scorer, store })
}

fn load_dataset(c: &CorpusArgs) -> Result<Dataset> {
    let templates = c.templates.as_deref().map(load_templates).transpose()?;
    let name = c
        .corpus
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".into());
    let load = load_corpus(&c.corpus, &name, templates.as_ref())?;
    if !load.skipped.is_empty() {
        log::warn!("{} corpus lines skipped", load.skipped.len());
        for s in &load.skipped.skipped {
            log::debug!("{}:{}: {}", s.source, s.line, s.reason);
        }
    }
    Ok(load.dataset)
}

/// Load, restyle and single-token filter a corpus; open a backend that knows it.
fn prepare(g: &GlobalArgs, c: &CorpusArgs, style: TemplateStyle) -> Result<(Dataset, Backend)> {
    let dataset = load_dataset(c)?.restyled(style)?;
    let backend = open_backend(g, Plant::Dataset(&dataset))?;
    let vocab = backend.scorer.descriptor().vocabulary.clone();
    let outcome = filter_single_token_objects(&dataset, &vocab, &ScorerTokenizer(backend.scorer.as_ref()));
    if outcome.dropped() > 0 {
        log::info!("single-token filter dropped {} facts", outcome.dropped());
    }
    if outcome.dataset.is_empty() {
        return Err(Error::ZeroFacts("zero facts loaded after the single-token filter".into()));
    }
    Ok((outcome.dataset, backend))
}

fn probe_config(g: &GlobalArgs, o: &ProbeOptions, n_demos: usize) -> ProbeConfig {
    ProbeConfig {
        n_demos,
        selection: match o.selection {
            SelectionKind::Random => Selection::Random,
            SelectionKind::Close => Selection::Close { k_pool: o.k_pool },
        },
        template_style: o.template_style,
        k_list: o.k.clone(),
        trials: o.trials,
        seed: g.seed,
        separator: o.separator,
        fixed_demos: o.fixed_demos,
        select: SelectOptions {
            exclude_same_object: o.strict,
        },
        batch: BatchOptions {
            batch_size: g.batch_size,
            jobs: g.jobs,
        },
    }
}

fn prompt_lines(prober: &Prober<'_>, trial: usize) -> Result<String> {
    let mut text = String::new();
    for p in prober.prompts(trial)? {
        // keep one prompt per line whatever the separator
        text.push_str(&p.prompt.text.replace('\n', "\\n"));
        text.push('\n');
    }
    Ok(text)
}

#[derive(Serialize)]
struct Wrapped<'a, T: Serialize> {
    run: &'a serde_json::Value,
    #[serde(flatten)]
    body: T,
}

macro_rules! say {
    ($w:expr, $($arg:tt)*) => {
        writeln!($w, $($arg)*).map_err(console_err)?
    };
}

fn console_err(e: std::io::Error) -> Error {
    Error::io("<console>", e)
}

/// Parse `args` and run; clap errors are returned as usage errors.
pub fn run_from<I, T>(args: I, console: &mut dyn Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Config(e.to_string()))?;
    run(&cli, console)
}

/// Run a parsed command, writing human-readable summaries to `console`.
pub fn run(cli: &Cli, console: &mut dyn Write) -> Result<()> {
    let g = &cli.global;
    let run_config = serde_json::to_value(cli)?;
    let out = &g.out;
    match &cli.command {
        Command::Stats(a) => {
            let mut dataset = load_dataset(&a.corpus)?;
            if a.filter {
                let backend = open_backend(g, Plant::Dataset(&dataset))?;
                let vocab = backend.scorer.descriptor().vocabulary.clone();
                dataset = filter_single_token_objects(&dataset, &vocab, &ScorerTokenizer(backend.scorer.as_ref()))
                    .dataset;
            }
            let stats = dataset_stats(&dataset);
            say!(console, "{} facts, {} relations", stats.facts, stats.relations);
            write_json(&out.join("stats.json"), &stats)?;
        }
        Command::Probe(a) => {
            let (dataset, backend) = prepare(g, &a.corpus, a.options.template_style)?;
            let config = probe_config(g, &a.options, a.n_demos);
            let prober = Prober::new(&dataset, config, backend.scorer.as_ref(), &backend.store)?;
            if let Some(path) = &a.dump_prompts {
                write_text(path, &prompt_lines(&prober, 0)?)?;
            }
            let mut report = prober.run()?;
            report.config_snapshot.run = Some(run_config);
            for (k, s) in &report.aggregate.p_at_k {
                say!(console, "P@{k} = {:.4} ± {:.4}", s.mean, s.stddev);
            }
            write_json(&out.join("report.json"), &report)?;
            write_text(&out.join("report.csv"), &report_csv(&report)?)?;
        }
        Command::Sweep(a) => {
            let (dataset, backend) = prepare(g, &a.corpus, a.options.template_style)?;
            let config = probe_config(g, &a.options, 0);
            let mut sweep = run_sweep(&dataset, &config, &a.n_demos, backend.scorer.as_ref(), &backend.store)?;
            let label = format!(
                "{}-{}",
                serde_json::to_value(a.options.selection)?.as_str().unwrap_or("run"),
                a.options.template_style
            );
            let mut k_list = config.k_list.clone();
            k_list.sort_unstable();
            k_list.dedup();
            let curves = k_list
                .iter()
                .map(|&k| sweep.p_at_k_curve(k, &format!("{label}-p@{k}")))
                .collect::<Result<Vec<CurveSeries>>>()?;
            for (n, report) in &mut sweep.points {
                report.config_snapshot.run = Some(run_config.clone());
                say!(console, "n={n} P@1 = {:.4}", report.aggregate.p_at_k.values().next().map_or(0.0, |s| s.mean));
            }
            write_json(&out.join("sweep.json"), &sweep)?;
            write_json(&out.join("curves.json"), &curves)?;
            write_text(&out.join("curves.csv"), &curves_csv(&curves)?)?;
        }
        Command::Analogy(a) => {
            let load = load_bats(&a.bats)?;
            if !load.skipped.is_empty() {
                log::warn!("{} analogy lines skipped", load.skipped.len());
            }
            let backend = open_backend(g, Plant::Analogy(&load.relations, a.template_style))?;
            let mut reports = Vec::new();
            let mut ns = a.n_demos.clone();
            ns.sort_unstable();
            ns.dedup();
            for &n in &ns {
                let config = AnalogyConfig {
                    n_demos: n,
                    template_style: a.template_style,
                    solvable_only: a.solvable_only,
                    trials: a.trials,
                    seed: g.seed,
                    separator: a.separator,
                    batch: BatchOptions {
                        batch_size: g.batch_size,
                        jobs: g.jobs,
                    },
                };
                let r = evaluate_analogies(&load.relations, &config, backend.scorer.as_ref())?;
                say!(console, "n={n} P@1 = {:.4} (coverage {:.4})", r.overall.mean, r.coverage.fraction);
                reports.push(r);
            }
            let curve = CurveSeries::new(
                format!("analogy-{}", a.template_style),
                ns.clone(),
                reports.iter().map(|r| r.overall.mean).collect(),
                reports.iter().map(|r| r.overall.stddev).collect(),
            )?;
            #[derive(Serialize)]
            struct Body<'a> {
                reports: &'a [crate::analogy::AnalogyReport],
                skipped_lines: usize,
            }
            write_json(
                &out.join("analogy.json"),
                &Wrapped {
                    run: &run_config,
                    body: Body {
                        reports: &reports,
                        skipped_lines: load.skipped.len(),
                    },
                },
            )?;
            write_text(&out.join("analogy.csv"), &analogy_csv(&reports)?)?;
            write_text(&out.join("curves.csv"), &curves_csv(&[curve])?)?;
        }
        Command::Twc(a) => {
            let scenes = load_scenes(&a.scenes)?;
            let table = load_object_table(&a.objects)?;
            let options = AgentOptions {
                runs: a.runs,
                seed: g.seed,
                jobs: g.jobs,
            };
            let (sources, backend) = match a.prior {
                PriorKind::Uniform => (vec![PriorSource::Uniform], None),
                PriorKind::Oracle => (vec![PriorSource::Oracle], None),
                PriorKind::Lm => {
                    let mut ns = a.n_demos.clone();
                    ns.sort_unstable();
                    ns.dedup();
                    (
                        ns.into_iter().map(|n_demos| PriorSource::Lm { n_demos }).collect(),
                        Some(open_backend(g, Plant::Twc(&scenes, &table))?),
                    )
                }
            };
            let scorer = backend.as_ref().map(|b| b.scorer.as_ref());
            let mut reports = Vec::new();
            for source in sources {
                let r = evaluate_agent(&scenes, source, scorer, &table, &options)?;
                say!(console, "{source}: score {:.4} ± {:.4}", r.score.mean, r.score.stddev);
                reports.push(r);
            }
            let x = reports
                .iter()
                .map(|r| match r.prior {
                    PriorSource::Lm { n_demos } => n_demos,
                    _ => 0,
                })
                .collect();
            let curve = CurveSeries::new(
                format!("twc-{}", serde_json::to_value(a.prior)?.as_str().unwrap_or("prior")),
                x,
                reports.iter().map(|r| r.score.mean).collect(),
                reports.iter().map(|r| r.score.stddev).collect(),
            )?;
            #[derive(Serialize)]
            struct Body<'a> {
                reports: &'a [crate::twc::AgentReport],
            }
            write_json(
                &out.join("twc.json"),
                &Wrapped {
                    run: &run_config,
                    body: Body { reports: &reports },
                },
            )?;
            write_text(&out.join("curves.csv"), &curves_csv(&[curve])?)?;
        }
        Command::EmbedExport(a) => {
            let (dataset, backend) = prepare(g, &a.corpus, a.options.template_style)?;
            let config = probe_config(g, &a.options, a.n_demos);
            let batch = config.batch;
            let prober = Prober::new(&dataset, config, backend.scorer.as_ref(), &backend.store)?;
            let prompts = prober.prompts(0)?;
            let texts: Vec<String> = prompts.iter().map(|p| p.prompt.text.clone()).collect();
            let vectors = embed_all(backend.scorer.as_ref(), &texts, &batch)?;
            let rows: Vec<EmbeddingRow> = prompts
                .iter()
                .zip(vectors)
                .map(|(p, vector)| EmbeddingRow {
                    query_id: format!("{}-{}", p.query.relation_id, p.query_index),
                    relation_id: p.query.relation_id.clone(),
                    vector,
                })
                .collect();
            say!(console, "{} embeddings", rows.len());
            write_text(&out.join("embeddings.csv"), &embeddings_csv(&rows)?)?;
        }
        Command::DumpPrompts(a) => {
            let p = &a.probe;
            let (dataset, backend) = prepare(g, &p.corpus, p.options.template_style)?;
            let config = probe_config(g, &p.options, p.n_demos);
            if a.trial >= config.trials {
                return Err(Error::Config(format!("trial {} of {}", a.trial, config.trials)));
            }
            let prober = Prober::new(&dataset, config, backend.scorer.as_ref(), &backend.store)?;
            let text = prompt_lines(&prober, a.trial)?;
            match &p.dump_prompts {
                Some(path) => write_text(path, &text)?,
                None => console.write_all(text.as_bytes()).map_err(console_err)?,
            }
        }
    }
    Ok(())
}
