//! Demonstration selection: uniform sampling, or sampling among the subjects
//! closest to the query subject in embedding space.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::corpus::FactTriple;
use crate::error::{Error, Result};
use crate::scorer::Scorer;
use crate::seed;

/// A subject encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidEmbedding("zero-dimensional vector".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidEmbedding(format!("component {i} is not finite")));
        }
        Ok(EmbeddingVector(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|v| v * factor).collect())
    }
}

/// Cosine similarity; `None` when either vector has zero norm or dimensions differ.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Option<f64> {
    if a.dimension() != b.dimension() {
        return None;
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Some(dot / (na * nb))
}

/// Candidate demonstrations for one relation.
#[derive(Debug, Clone)]
pub struct ExamplePool {
    pub relation_id: String,
    pub candidates: Vec<FactTriple>,
    embeddings: Option<Vec<EmbeddingVector>>,
}

impl ExamplePool {
    pub fn new(relation_id: impl Into<String>, candidates: Vec<FactTriple>) -> Self {
        ExamplePool {
            relation_id: relation_id.into(),
            candidates,
            embeddings: None,
        }
    }

    pub fn with_embeddings(mut self, embeddings: Vec<EmbeddingVector>) -> Result<Self> {
        if embeddings.len() != self.candidates.len() {
            return Err(Error::InvalidEmbedding(format!(
                "{} embeddings for {} candidates",
                embeddings.len(),
                self.candidates.len()
            )));
        }
        self.embeddings = Some(embeddings);
        Ok(self)
    }

    pub fn embeddings(&self) -> Option<&[EmbeddingVector]> {
        self.embeddings.as_deref()
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// Candidate indices allowed as demonstrations for `query`.
    fn eligible(&self, query: &FactTriple, options: &SelectOptions) -> Vec<usize> {
        self.candidates
            .iter()
            .enumerate()
            .filter(|(_, c)| *c != query)
            .filter(|(_, c)| !options.exclude_same_object || c.object != query.object)
            .map(|(i, _)| i)
            .collect()
    }

    fn check_relation(&self, query: &FactTriple) -> Result<()> {
        if query.relation_id != self.relation_id {
            return Err(Error::Config(format!(
                "query relation {} does not match pool relation {}",
                query.relation_id, self.relation_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectOptions {
    /// Leakage-study mode: never show a demonstration sharing the query's object.
    pub exclude_same_object: bool,
}

/// Chosen demonstrations, in prompt order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Demonstrations {
    pub indices: Vec<usize>,
    pub facts: Vec<FactTriple>,
    /// How many requested demonstrations could not be supplied.
    pub shortfall: usize,
}

impl Demonstrations {
    fn from_indices(pool: &ExamplePool, indices: Vec<usize>, requested: usize) -> Self {
        let facts = indices.iter().map(|&i| pool.candidates[i].clone()).collect();
        Demonstrations {
            shortfall: requested.saturating_sub(indices.len()),
            indices,
            facts,
        }
    }
}

fn sample_from(subset: &[usize], n: usize, seed_value: u64) -> Vec<usize> {
    let take = n.min(subset.len());
    let mut rng = seed::rng(seed_value);
    index::sample(&mut rng, subset.len(), take)
        .into_iter()
        .map(|i| subset[i])
        .collect()
}

/// Draw `n` distinct demonstrations uniformly without replacement.
pub fn sample_random(
    pool: &ExamplePool,
    n: usize,
    query: &FactTriple,
    seed_value: u64,
    options: &SelectOptions,
) -> Result<Demonstrations> {
    pool.check_relation(query)?;
    let eligible = pool.eligible(query, options);
    Ok(Demonstrations::from_indices(
        pool,
        sample_from(&eligible, n, seed_value),
        n,
    ))
}

/// Default size of the nearest-neighbour subset sampled by [`select_close`].
pub fn default_k_pool(n: usize) -> usize {
    10.max(3 * n)
}

/// Candidates ranked by cosine similarity to `query_embedding`, best first.
///
/// Candidates sharing the query subject are left out, as are zero-norm
/// embeddings. Ties keep ascending pool order.
pub fn rank_by_similarity(
    query: &FactTriple,
    query_embedding: &EmbeddingVector,
    pool: &ExamplePool,
    options: &SelectOptions,
) -> Result<Vec<(usize, f64)>> {
    pool.check_relation(query)?;
    let embeddings = pool
        .embeddings()
        .ok_or_else(|| Error::Config(format!("pool {} has no embeddings", pool.relation_id)))?;
    if query_embedding.norm() == 0.0 {
        return Err(Error::InvalidEmbedding(format!(
            "query subject {:?} has a zero-norm embedding",
            query.subject
        )));
    }
    let mut ranked: Vec<(usize, f64)> = Vec::new();
    for i in pool.eligible(query, options) {
        if pool.candidates[i].subject == query.subject {
            continue;
        }
        match cosine(query_embedding, &embeddings[i]) {
            Some(sim) => ranked.push((i, sim)),
            None => log::warn!(
                "excluding candidate {:?} of {}: cosine undefined",
                pool.candidates[i].subject,
                pool.relation_id
            ),
        }
    }
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ranked)
}

/// Take the `k_pool` nearest candidates, then sample `n` of them uniformly.
pub fn select_close(
    query: &FactTriple,
    query_embedding: &EmbeddingVector,
    pool: &ExamplePool,
    n: usize,
    k_pool: usize,
    seed_value: u64,
    options: &SelectOptions,
) -> Result<Demonstrations> {
    if k_pool < n {
        return Err(Error::Config(format!("k_pool {k_pool} is smaller than n {n}")));
    }
    let ranked = rank_by_similarity(query, query_embedding, pool, options)?;
    let top: Vec<usize> = ranked.into_iter().take(k_pool).map(|(i, _)| i).collect();
    Ok(Demonstrations::from_indices(
        pool,
        sample_from(&top, n, seed_value),
        n,
    ))
}

/// Encode one subject with the backend.
pub fn embed_subject(subject: &str, backend: &dyn Scorer) -> Result<EmbeddingVector> {
    backend
        .embed_batch(&[subject.to_string()])
        .map_err(|e| e.for_query(subject, "embed"))?
        .pop()
        .ok_or_else(|| Error::Backend("embed returned no vectors".into()))
}

#[derive(Serialize, Deserialize)]
struct EmbeddingRecord {
    backend_id: String,
    subject: String,
    vector: EmbeddingVector,
}

/// Subject embeddings keyed by (backend id, subject), optionally persisted as
/// JSON lines. Floats are written in shortest round-trip form, so a reloaded
/// store reproduces rankings exactly.
#[derive(Debug, Default)]
pub struct EmbeddingStore {
    entries: RwLock<HashMap<(String, String), EmbeddingVector>>,
    file: Option<(PathBuf, Mutex<File>)>,
}

impl EmbeddingStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Open (creating if needed) a persistent store.
    pub fn open(path: &Path) -> Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
            for (idx, line) in reader.lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: EmbeddingRecord = serde_json::from_str(&line)
                    .map_err(|e| Error::parse(format!("{}:{}", path.display(), idx + 1), e))?;
                entries.insert((rec.backend_id, rec.subject), rec.vector);
            }
        } else if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(EmbeddingStore {
            entries: RwLock::new(entries),
            file: Some((path.to_path_buf(), Mutex::new(file))),
        })
    }

    pub fn get(&self, backend_id: &str, subject: &str) -> Option<EmbeddingVector> {
        self.entries
            .read()
            .expect("embedding store poisoned")
            .get(&(backend_id.to_string(), subject.to_string()))
            .cloned()
    }

    pub fn insert(&self, backend_id: &str, subject: &str, vector: EmbeddingVector) -> Result<()> {
        let key = (backend_id.to_string(), subject.to_string());
        let mut entries = self.entries.write().expect("embedding store poisoned");
        if entries.contains_key(&key) {
            return Ok(());
        }
        if let Some((path, file)) = &self.file {
            let record = EmbeddingRecord {
                backend_id: key.0.clone(),
                subject: key.1.clone(),
                vector: vector.clone(),
            };
            let mut line = serde_json::to_string(&record)?;
            line.push('\n');
            file.lock()
                .expect("embedding file poisoned")
                .write_all(line.as_bytes())
                .map_err(|e| Error::io(path, e))?;
        }
        entries.insert(key, vector);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("embedding store poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Embeddings for `subjects` in order, computing missing ones in batches.
    pub fn embed_all(
        &self,
        backend: &dyn Scorer,
        subjects: &[String],
        batch: &crate::scorer::BatchOptions,
    ) -> Result<Vec<EmbeddingVector>> {
        let backend_id = backend.descriptor().backend_id.clone();
        let mut missing: Vec<String> = subjects
            .iter()
            .filter(|s| self.get(&backend_id, s).is_none())
            .cloned()
            .collect();
        missing.sort();
        missing.dedup();
        if !missing.is_empty() {
            let vectors = crate::scorer::embed_all(backend, &missing, batch)?;
            for (subject, vector) in missing.iter().zip(vectors) {
                if vector.dimension() != backend.descriptor().hidden_size {
                    return Err(Error::InvalidEmbedding(format!(
                        "backend returned dimension {} for {subject:?}, expected {}",
                        vector.dimension(),
                        backend.descriptor().hidden_size
                    )));
                }
                self.insert(&backend_id, subject, vector)?;
            }
        }
        subjects
            .iter()
            .map(|s| {
                self.get(&backend_id, s)
                    .ok_or_else(|| Error::Backend(format!("no embedding for {s:?}")))
            })
            .collect()
    }
}
