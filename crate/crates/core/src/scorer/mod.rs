//! Masked-LM scoring.
//!
//! [`Scorer`] is the backend boundary: probabilities (never logits) for a
//! masked position, sequence-start embeddings, and candidate scores. Two
//! backends ship with the crate: [`ScriptedBackend`], a deterministic offline
//! model with planted facts, and [`HttpScorer`], a client for the model-server
//! wire protocol. [`CachedScorer`] wraps either one.
//!
//! Cache directory layout (see [`CachedScorer::open`]):
//!
//! ```text
//! <cache-dir>/<backend-id>/fill_mask.jsonl
//! <cache-dir>/<backend-id>/embed.jsonl
//! <cache-dir>/<backend-id>/score_candidates.jsonl
//! ```
//!
//! Each line holds `{"key": <sha256 hex>, "value": <payload>}`.

mod cache;
mod http;
mod scripted;

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use cache::CachedScorer;
pub use http::{HttpOptions, HttpScorer, RetryPolicy};
pub use scripted::{filler_tokens, unit_hash, PlantedFact, ScriptedBackend, ScriptedConfig};

use crate::corpus::{Tokenizer, Vocabulary, WhitespaceTokenizer};
use crate::error::{Error, Result};
use crate::prompt::PromptString;
use crate::sampler::EmbeddingVector;

/// Tolerance on the total mass of a full-vocabulary distribution.
pub const MASS_EPSILON: f64 = 1e-6;

/// Static facts about a backend.
#[derive(Debug, Clone, Serialize)]
pub struct BackendDescriptor {
    pub backend_id: String,
    pub mask_token: String,
    pub hidden_size: usize,
    pub max_tokens: usize,
    #[serde(skip)]
    pub vocabulary: Arc<Vocabulary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenProb {
    pub token: String,
    pub prob: f64,
}

/// Which part of the vocabulary a distribution covers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coverage {
    Full,
    /// Server-side truncation to the most probable tokens.
    TopN(usize),
    /// Renormalized over the recorded candidate set.
    Restricted(Vec<String>),
}

/// Token probabilities for one masked position.
///
/// Entries are kept in canonical order: probability descending, then token
/// ascending. Ranks and top-k sets are read straight off that order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreDistribution {
    entries: Vec<TokenProb>,
    coverage: Coverage,
    prompt_digest: String,
}

fn canonical_order(a: &TokenProb, b: &TokenProb) -> std::cmp::Ordering {
    b.prob.total_cmp(&a.prob).then_with(|| a.token.cmp(&b.token))
}

impl ScoreDistribution {
    pub fn new(prompt: &str, entries: Vec<TokenProb>, coverage: Coverage) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for e in &entries {
            if !(0.0..=1.0 + MASS_EPSILON).contains(&e.prob) || e.prob.is_nan() {
                return Err(Error::Backend(format!(
                    "probability {} for {:?} outside [0, 1]",
                    e.prob, e.token
                )));
            }
            if !seen.insert(e.token.as_str()) {
                return Err(Error::Backend(format!("duplicate token {:?}", e.token)));
            }
        }
        let mut entries = entries;
        for e in &mut entries {
            e.prob = e.prob.min(1.0);
        }
        entries.sort_by(canonical_order);
        Ok(ScoreDistribution {
            entries,
            coverage,
            prompt_digest: digest(prompt),
        })
    }

    pub fn entries(&self) -> &[TokenProb] {
        &self.entries
    }

    pub fn coverage(&self) -> &Coverage {
        &self.coverage
    }

    pub fn prompt_digest(&self) -> &str {
        &self.prompt_digest
    }

    pub fn total_mass(&self) -> f64 {
        self.entries.iter().map(|e| e.prob).sum()
    }

    /// Probability of `token`, 0 when it is outside the retrieved entries.
    pub fn prob(&self, token: &str) -> f64 {
        self.entries
            .iter()
            .find(|e| e.token == token)
            .map_or(0.0, |e| e.prob)
    }

    /// 1-based rank of `token` among entries with positive probability.
    pub fn rank(&self, token: &str) -> Option<usize> {
        self.entries
            .iter()
            .take_while(|e| e.prob > 0.0)
            .position(|e| e.token == token)
            .map(|p| p + 1)
    }

    /// Renormalize over `tokens`; tokens missing from the entries get 0.
    pub fn restricted(&self, tokens: &[String]) -> Self {
        let mut picked: Vec<TokenProb> = Vec::new();
        for t in tokens {
            if picked.iter().any(|p| &p.token == t) {
                continue;
            }
            picked.push(TokenProb {
                token: t.clone(),
                prob: self.prob(t),
            });
        }
        let mass: f64 = picked.iter().map(|p| p.prob).sum();
        if mass > 0.0 {
            for p in &mut picked {
                p.prob /= mass;
            }
        }
        picked.sort_by(canonical_order);
        ScoreDistribution {
            entries: picked,
            coverage: Coverage::Restricted(tokens.to_vec()),
            prompt_digest: self.prompt_digest.clone(),
        }
    }
}

/// The k most probable tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub tokens: Vec<TokenProb>,
}

impl PredictionSet {
    pub fn contains(&self, token: &str) -> bool {
        self.tokens.iter().any(|t| t.token == token)
    }

    pub fn top(&self) -> Option<&str> {
        self.tokens.first().map(|t| t.token.as_str())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Top-k by probability, ties broken by lexicographic token order.
pub fn top_k(dist: &ScoreDistribution, k: usize) -> PredictionSet {
    PredictionSet {
        tokens: dist.entries.iter().take(k.max(1)).cloned().collect(),
    }
}

/// Hex SHA-256 of `text`.
pub fn digest(text: &str) -> String {
    let hash = Sha256::digest(text.as_bytes());
    hash.iter().map(|b| format!("{b:02x}")).collect()
}

/// A masked-LM backend.
pub trait Scorer: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    fn tokenize(&self, text: &str) -> Vec<String> {
        WhitespaceTokenizer.tokenize(text)
    }

    /// One distribution per prompt, in prompt order.
    fn fill_mask_batch(
        &self,
        prompts: &[String],
        restrict: Option<&[String]>,
    ) -> Result<Vec<ScoreDistribution>>;

    /// Sequence-start encoding of each text.
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>>;

    /// Candidate scores per prompt, each row summing to one.
    fn score_candidates_batch(
        &self,
        prompts: &[String],
        candidates: &[Vec<String>],
    ) -> Result<Vec<Vec<f64>>>;
}

/// Adapts a scorer's tokenizer to [`Tokenizer`].
pub struct ScorerTokenizer<'a>(pub &'a dyn Scorer);

impl Tokenizer for ScorerTokenizer<'_> {
    fn tokenize(&self, text: &str) -> Vec<String> {
        self.0.tokenize(text)
    }
}

fn check_single_mask(prompt: &PromptString, mask_token: &str) -> Result<()> {
    let found = prompt.text.matches(mask_token).count();
    if found != 1 {
        return Err(Error::InvalidPrompt(format!(
            "expected exactly one {mask_token} in {:?}, found {found}",
            prompt.text
        )));
    }
    Ok(())
}

/// Distribution for a single-mask prompt.
pub fn fill_mask(
    backend: &dyn Scorer,
    prompt: &PromptString,
    restrict: Option<&[String]>,
) -> Result<ScoreDistribution> {
    check_single_mask(prompt, &backend.descriptor().mask_token)?;
    backend
        .fill_mask_batch(std::slice::from_ref(&prompt.text), restrict)?
        .pop()
        .ok_or_else(|| Error::Backend("fill_mask returned no results".into()))
}

/// Candidate → score for one prompt whose mask marks the candidate span.
pub fn score_candidates(
    backend: &dyn Scorer,
    prompt: &PromptString,
    candidates: &[String],
) -> Result<Vec<(String, f64)>> {
    check_single_mask(prompt, &backend.descriptor().mask_token)?;
    if candidates.is_empty() {
        return Err(Error::Config("empty candidate list".into()));
    }
    let scores = backend
        .score_candidates_batch(std::slice::from_ref(&prompt.text), &[candidates.to_vec()])?
        .pop()
        .ok_or_else(|| Error::Backend("score_candidates returned no results".into()))?;
    Ok(candidates.iter().cloned().zip(scores).collect())
}

/// Client-side candidate scoring built on fill-mask.
///
/// An m-token candidate is scored by masking each of its positions in turn
/// with the other m−1 tokens in place, averaging the log-probabilities of the
/// masked tokens, and taking a softmax of those averages over the candidates.
/// For single-token candidates this equals fill-mask restricted to the set.
pub fn score_candidates_by_masking(
    backend: &dyn Scorer,
    prompts: &[String],
    candidates: &[Vec<String>],
) -> Result<Vec<Vec<f64>>> {
    if prompts.len() != candidates.len() {
        return Err(Error::Config(format!(
            "{} prompts but {} candidate lists",
            prompts.len(),
            candidates.len()
        )));
    }
    let mask = backend.descriptor().mask_token.clone();
    // (prompt idx, candidate idx, gold token) per probe text
    let mut probes: Vec<(usize, usize, String)> = Vec::new();
    let mut texts: Vec<String> = Vec::new();
    for (p, (prompt, cands)) in prompts.iter().zip(candidates).enumerate() {
        if cands.is_empty() {
            return Err(Error::Config(format!("empty candidate list for prompt {p}")));
        }
        let (head, tail) = prompt.split_once(mask.as_str()).ok_or_else(|| {
            Error::InvalidPrompt(format!("no candidate span marker in {prompt:?}"))
        })?;
        if tail.contains(mask.as_str()) {
            return Err(Error::InvalidPrompt(format!("more than one span marker in {prompt:?}")));
        }
        for (c, cand) in cands.iter().enumerate() {
            let tokens = backend.tokenize(cand);
            if tokens.is_empty() {
                return Err(Error::Config(format!("candidate {cand:?} has no tokens")));
            }
            for j in 0..tokens.len() {
                let span: Vec<&str> = tokens
                    .iter()
                    .enumerate()
                    .map(|(i, t)| if i == j { mask.as_str() } else { t.as_str() })
                    .collect();
                texts.push(format!("{head}{}{tail}", span.join(" ")));
                probes.push((p, c, tokens[j].clone()));
            }
        }
    }
    let dists = backend.fill_mask_batch(&texts, None)?;

    let mut sums: Vec<Vec<(f64, usize)>> =
        candidates.iter().map(|c| vec![(0.0, 0); c.len()]).collect();
    for ((p, c, gold), dist) in probes.iter().zip(&dists) {
        let slot = &mut sums[*p][*c];
        slot.0 += dist.prob(gold).ln();
        slot.1 += 1;
    }
    sums.into_iter()
        .enumerate()
        .map(|(p, row)| {
            let logs: Vec<f64> = row.iter().map(|(s, m)| s / *m as f64).collect();
            softmax(&logs).ok_or_else(|| {
                Error::Backend(format!(
                    "no candidate has nonzero probability for prompt {:?}",
                    prompts[p]
                ))
            })
        })
        .collect()
}

/// Softmax over log-scores; `None` when every score is −∞.
pub fn softmax(logs: &[f64]) -> Option<Vec<f64>> {
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return None;
    }
    let exp: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    Some(exp.into_iter().map(|e| e / total).collect())
}

/// Batch size and concurrency for bulk scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchOptions {
    pub batch_size: usize,
    /// Upper bound on concurrent in-flight backend calls.
    pub jobs: usize,
}

impl Default for BatchOptions {
    fn default() -> Self {
        BatchOptions {
            batch_size: 32,
            jobs: 1,
        }
    }
}

/// Split `items` into batches, run `call` on each with at most `jobs` in
/// flight, and concatenate the results in input order.
fn run_batched<T, R, F>(items: &[T], batch: &BatchOptions, call: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&[T]) -> Result<Vec<R>> + Sync,
{
    if items.is_empty() {
        return Ok(Vec::new());
    }
    let size = batch.batch_size.max(1);
    let chunks: Vec<&[T]> = items.chunks(size).collect();
    let check = |chunk: &[T], out: Vec<R>| -> Result<Vec<R>> {
        if out.len() != chunk.len() {
            return Err(Error::Backend(format!(
                "backend returned {} results for {} inputs",
                out.len(),
                chunk.len()
            )));
        }
        Ok(out)
    };
    let results: Vec<Result<Vec<R>>> = if batch.jobs <= 1 || chunks.len() == 1 {
        chunks.iter().map(|c| call(c).and_then(|o| check(c, o))).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(batch.jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| {
            chunks
                .par_iter()
                .map(|c| call(c).and_then(|o| check(c, o)))
                .collect()
        })
    };
    let mut out = Vec::with_capacity(items.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

pub fn fill_mask_all(
    backend: &dyn Scorer,
    prompts: &[String],
    restrict: Option<&[String]>,
    batch: &BatchOptions,
) -> Result<Vec<ScoreDistribution>> {
    run_batched(prompts, batch, |chunk| backend.fill_mask_batch(chunk, restrict))
}

pub fn embed_all(
    backend: &dyn Scorer,
    texts: &[String],
    batch: &BatchOptions,
) -> Result<Vec<EmbeddingVector>> {
    run_batched(texts, batch, |chunk| backend.embed_batch(chunk))
}

pub fn score_candidates_all(
    backend: &dyn Scorer,
    prompts: &[String],
    candidates: &[Vec<String>],
    batch: &BatchOptions,
) -> Result<Vec<Vec<f64>>> {
    if prompts.len() != candidates.len() {
        return Err(Error::Config("prompt and candidate counts differ".into()));
    }
    let pairs: Vec<(String, Vec<String>)> =
        prompts.iter().cloned().zip(candidates.iter().cloned()).collect();
    run_batched(&pairs, batch, |chunk| {
        let (p, c): (Vec<String>, Vec<Vec<String>>) = chunk.iter().cloned().unzip();
        backend.score_candidates_batch(&p, &c)
    })
}
