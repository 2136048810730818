use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{digest, BackendDescriptor, ScoreDistribution, Scorer};
use crate::error::{Error, Result};
use crate::sampler::EmbeddingVector;

#[derive(Serialize, Deserialize)]
struct Line<V> {
    key: String,
    value: V,
}

/// One keyed table, in memory and optionally appended to a JSON-lines file.
struct Table<V> {
    entries: RwLock<HashMap<String, V>>,
    file: Option<(PathBuf, Mutex<File>)>,
}

impl<V: Clone + Serialize + DeserializeOwned> Table<V> {
    fn memory() -> Self {
        Table {
            entries: RwLock::new(HashMap::new()),
            file: None,
        }
    }

    fn open(path: PathBuf) -> Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path).map_err(|e| Error::io(&path, e))?);
            for (idx, line) in reader.lines().enumerate() {
                let line = line.map_err(|e| Error::io(&path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<Line<V>>(&line) {
                    Ok(l) => {
                        entries.insert(l.key, l.value);
                    }
                    // a torn final line from an interrupted run
                    Err(e) => log::warn!("{}:{}: ignoring cache line: {e}", path.display(), idx + 1),
                }
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(Table {
            entries: RwLock::new(entries),
            file: Some((path, Mutex::new(file))),
        })
    }

    fn get(&self, key: &str) -> Option<V> {
        self.entries.read().expect("cache poisoned").get(key).cloned()
    }

    fn insert(&self, key: String, value: V) -> Result<()> {
        let mut entries = self.entries.write().expect("cache poisoned");
        if entries.contains_key(&key) {
            return Ok(());
        }
        if let Some((path, file)) = &self.file {
            let mut line = serde_json::to_string(&Line { key: key.clone(), value: value.clone() })?;
            line.push('\n');
            file.lock()
                .expect("cache file poisoned")
                .write_all(line.as_bytes())
                .map_err(|e| Error::io(path, e))?;
        }
        entries.insert(key, value);
        Ok(())
    }

    fn len(&self) -> usize {
        self.entries.read().expect("cache poisoned").len()
    }
}

/// Response cache in front of any backend.
///
/// Keys hash the backend id together with the exact request, so switching
/// backends never serves stale scores. Misses within one batch are forwarded
/// to the inner backend as a single batch.
pub struct CachedScorer<S> {
    inner: S,
    fill: Table<ScoreDistribution>,
    embed: Table<EmbeddingVector>,
    candidates: Table<Vec<f64>>,
}

fn key(kind: &str, backend_id: &str, payload: &impl Serialize) -> String {
    let body = serde_json::to_string(&(kind, backend_id, payload)).expect("serializable key");
    digest(&body)
}

/// Keep backend ids usable as directory names.
fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

impl<S: Scorer> CachedScorer<S> {
    pub fn in_memory(inner: S) -> Self {
        CachedScorer {
            inner,
            fill: Table::memory(),
            embed: Table::memory(),
            candidates: Table::memory(),
        }
    }

    /// Persistent cache under `dir/<backend-id>/`.
    pub fn open(inner: S, dir: &Path) -> Result<Self> {
        let root = dir.join(sanitize(&inner.descriptor().backend_id));
        std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(CachedScorer {
            fill: Table::open(root.join("fill_mask.jsonl"))?,
            embed: Table::open(root.join("embed.jsonl"))?,
            candidates: Table::open(root.join("score_candidates.jsonl"))?,
            inner,
        })
    }

    pub fn inner(&self) -> &S {
        &self.inner
    }

    /// Number of cached (fill-mask, embed, score-candidates) entries.
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.fill.len(), self.embed.len(), self.candidates.len())
    }

    fn lookup<T, V, F>(&self, table: &Table<V>, keys: Vec<String>, items: &[T], fetch: F) -> Result<Vec<V>>
    where
        T: Clone,
        V: Clone + Serialize + DeserializeOwned,
        F: FnOnce(&[T]) -> Result<Vec<V>>,
    {
        let mut out: Vec<Option<V>> = keys.iter().map(|k| table.get(k)).collect();
        let mut miss_keys: Vec<&String> = Vec::new();
        let mut miss_items: Vec<T> = Vec::new();
        for (i, k) in keys.iter().enumerate() {
            if out[i].is_none() && !miss_keys.contains(&k) {
                miss_keys.push(k);
                miss_items.push(items[i].clone());
            }
        }
        if !miss_items.is_empty() {
            let fetched = fetch(&miss_items)?;
            if fetched.len() != miss_items.len() {
                return Err(Error::Backend(format!(
                    "backend returned {} results for {} inputs",
                    fetched.len(),
                    miss_items.len()
                )));
            }
            for (k, v) in miss_keys.iter().zip(fetched) {
                table.insert((*k).clone(), v)?;
            }
            for (i, k) in keys.iter().enumerate() {
                if out[i].is_none() {
                    out[i] = table.get(k);
                }
            }
        }
        Ok(out.into_iter().map(|v| v.expect("filled")).collect())
    }
}

impl<S: Scorer> Scorer for CachedScorer<S> {
    fn descriptor(&self) -> &BackendDescriptor {
        self.inner.descriptor()
    }

    fn tokenize(&self, text: &str) -> Vec<String> {
        self.inner.tokenize(text)
    }

    fn fill_mask_batch(
        &self,
        prompts: &[String],
        restrict: Option<&[String]>,
    ) -> Result<Vec<ScoreDistribution>> {
        let id = &self.inner.descriptor().backend_id;
        let keys = prompts
            .iter()
            .map(|p| key("fill_mask", id, &(p, restrict)))
            .collect();
        self.lookup(&self.fill, keys, prompts, |miss| {
            self.inner.fill_mask_batch(miss, restrict)
        })
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        let id = &self.inner.descriptor().backend_id;
        let keys = texts.iter().map(|t| key("embed", id, t)).collect();
        self.lookup(&self.embed, keys, texts, |miss| self.inner.embed_batch(miss))
    }

    fn score_candidates_batch(
        &self,
        prompts: &[String],
        candidates: &[Vec<String>],
    ) -> Result<Vec<Vec<f64>>> {
        if prompts.len() != candidates.len() {
            return Err(Error::Config("prompt and candidate counts differ".into()));
        }
        let id = &self.inner.descriptor().backend_id;
        let pairs: Vec<(String, Vec<String>)> =
            prompts.iter().cloned().zip(candidates.iter().cloned()).collect();
        let keys = pairs.iter().map(|pc| key("score_candidates", id, pc)).collect();
        self.lookup(&self.candidates, keys, &pairs, |miss| {
            let (p, c): (Vec<String>, Vec<Vec<String>>) = miss.iter().cloned().unzip();
            self.inner.score_candidates_batch(&p, &c)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorer::{ScriptedBackend, ScriptedConfig};
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Counting {
        inner: ScriptedBackend,
        calls: AtomicUsize,
    }

    impl Scorer for Counting {
        fn descriptor(&self) -> &BackendDescriptor {
            self.inner.descriptor()
        }
        fn fill_mask_batch(&self, p: &[String], r: Option<&[String]>) -> Result<Vec<ScoreDistribution>> {
            self.calls.fetch_add(p.len(), Ordering::SeqCst);
            self.inner.fill_mask_batch(p, r)
        }
        fn embed_batch(&self, t: &[String]) -> Result<Vec<EmbeddingVector>> {
            self.calls.fetch_add(t.len(), Ordering::SeqCst);
            self.inner.embed_batch(t)
        }
        fn score_candidates_batch(&self, p: &[String], c: &[Vec<String>]) -> Result<Vec<Vec<f64>>> {
            self.inner.score_candidates_batch(p, c)
        }
    }

    fn counting() -> Counting {
        Counting {
            inner: ScriptedBackend::new(ScriptedConfig::new(["a", "b", "c"])).unwrap(),
            calls: AtomicUsize::new(0),
        }
    }

    #[test]
    fn hits_skip_the_backend_and_duplicates_coalesce() {
        let cached = CachedScorer::in_memory(counting());
        let prompts = vec!["x [MASK]".to_string(), "y [MASK]".to_string(), "x [MASK]".to_string()];
        let first = cached.fill_mask_batch(&prompts, None).unwrap();
        assert_eq!(cached.inner().calls.load(Ordering::SeqCst), 2);
        let second = cached.fill_mask_batch(&prompts, None).unwrap();
        assert_eq!(cached.inner().calls.load(Ordering::SeqCst), 2);
        assert_eq!(first, second);
        assert_eq!(first[0], first[2]);
        // restriction is part of the key
        let r = cached.fill_mask_batch(&prompts[..1], Some(&["a".to_string()])).unwrap();
        assert_eq!(r[0].entries().len(), 1);
        assert_eq!(cached.inner().calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn persistent_cache_reloads_identically() {
        let dir = tempfile::tempdir().unwrap();
        let prompts = vec!["x [MASK]".to_string()];
        let texts = vec!["subject".to_string()];
        let (d, e) = {
            let cached = CachedScorer::open(counting(), dir.path()).unwrap();
            (
                cached.fill_mask_batch(&prompts, None).unwrap(),
                cached.embed_batch(&texts).unwrap(),
            )
        };
        let cached = CachedScorer::open(counting(), dir.path()).unwrap();
        assert_eq!(cached.sizes(), (1, 1, 0));
        assert_eq!(cached.fill_mask_batch(&prompts, None).unwrap(), d);
        assert_eq!(cached.embed_batch(&texts).unwrap(), e);
        assert_eq!(cached.inner().calls.load(Ordering::SeqCst), 0);
    }
}
