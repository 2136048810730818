//! A deterministic, offline masked-LM stand-in.
//!
//! Scoring rule for a prompt `P` and every predictable vocabulary token `t`:
//!
//! * base logit: `base_scale · u("fill", P, t)`, where `u` is [`unit_hash`];
//! * for each planted fact (template `T`, subject `s`, object tokens
//!   `o_1 … o_m`) and position `j`, let `Q_j` be `T` rendered with `s` and with
//!   `o_j` replaced by the mask token. If `P` ends with `Q_j` on a whitespace
//!   boundary, the fact fires: `o_j` receives `gold_offset + boost(d)`, where
//!   `d` counts occurrences of the anchor of `T` (its longest literal piece)
//!   in the text before `Q_j`, and
//!   `boost(d) = boost_per_demo · min(d, boost_saturation)` when
//!   `d ≥ boost_threshold`, otherwise 0;
//! * probabilities are the softmax of the logits over the vocabulary minus
//!   the mask token.
//!
//! Embeddings have `hidden_size` components `2·u("embed", text, i) − 1`,
//! normalized to unit length. A subject assigned to a cluster instead gets
//! `c + cluster_spread · n` before normalization, where `c` is the cluster
//! centre built the same way from `("cluster", id, i)` and `n` is its own
//! noise vector.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    score_candidates_by_masking, softmax, BackendDescriptor, Coverage, ScoreDistribution, Scorer,
    TokenProb,
};
use crate::corpus::{Dataset, Piece, RelationTemplate, TemplateStyle, Vocabulary};
use crate::error::{Error, Result};
use crate::prompt::{render_template, ObjectSlot};
use crate::sampler::EmbeddingVector;

/// Uniform value in `[0, 1)` keyed by `seed` and `parts`.
///
/// SHA-256 over the little-endian seed followed by each part as its
/// little-endian `u64` byte length and its bytes; the first eight digest
/// bytes read big-endian, shifted right by 11, times 2⁻⁵³.
pub fn unit_hash(seed: u64, parts: &[&str]) -> f64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    (u64::from_be_bytes(head) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// A fact the scripted model "knows".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedFact {
    /// Template surface with `[s]`/`[o]` slots.
    pub surface: String,
    pub subject: String,
    pub object: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedConfig {
    pub seed: u64,
    pub tokens: Vec<String>,
    pub mask_token: String,
    pub hidden_size: usize,
    pub max_tokens: usize,
    pub base_scale: f64,
    pub gold_offset: f64,
    pub boost_per_demo: f64,
    pub boost_threshold: usize,
    pub boost_saturation: usize,
    pub cluster_spread: f64,
    pub facts: Vec<PlantedFact>,
    pub clusters: BTreeMap<String, String>,
}

impl ScriptedConfig {
    /// Defaults: gold objects need at least one demonstration to surface.
    pub fn new<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ScriptedConfig {
            seed: 0,
            tokens: tokens.into_iter().map(Into::into).collect(),
            mask_token: "[MASK]".into(),
            hidden_size: 16,
            max_tokens: 512,
            base_scale: 1.0,
            gold_offset: -1.0,
            boost_per_demo: 6.0,
            boost_threshold: 1,
            boost_saturation: 3,
            cluster_spread: 0.15,
            facts: Vec::new(),
            clusters: BTreeMap::new(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn plant(&mut self, template: &RelationTemplate, subject: &str, object: &str) {
        self.facts.push(PlantedFact {
            surface: template.surface(),
            subject: subject.to_string(),
            object: object.to_string(),
        });
    }

    /// Plant every fact of a dataset under its relation template.
    pub fn plant_dataset(&mut self, dataset: &Dataset) {
        for (relation, facts) in dataset.relations() {
            let template = dataset.template(relation).expect("dataset invariant");
            for f in facts {
                self.plant(template, &f.subject, &f.object);
            }
        }
    }

    pub fn cluster(&mut self, subject: &str, cluster: &str) {
        self.clusters.insert(subject.to_string(), cluster.to_string());
    }

    /// Boost added to a gold token after `demos` demonstrations.
    pub fn boost(&self, demos: usize) -> f64 {
        if demos >= self.boost_threshold {
            self.boost_per_demo * demos.min(self.boost_saturation) as f64
        } else {
            0.0
        }
    }

    fn backend_id(&self) -> Result<String> {
        let json = serde_json::to_string(self)?;
        Ok(format!("scripted-{}", &super::digest(&json)[..12]))
    }
}

/// `count` filler words `w000`, `w001`, … for padding scripted vocabularies.
pub fn filler_tokens(count: usize) -> Vec<String> {
    (0..count).map(|i| format!("w{i:03}")).collect()
}

struct Trigger {
    plant: usize,
    gold: String,
}

pub struct ScriptedBackend {
    config: ScriptedConfig,
    descriptor: BackendDescriptor,
    /// Planted query string `Q_j` → facts that fire on it.
    triggers: HashMap<String, Vec<Trigger>>,
    anchors: Vec<Option<String>>,
}

impl ScriptedBackend {
    pub fn new(config: ScriptedConfig) -> Result<Self> {
        if config.tokens.is_empty() {
            return Err(Error::Config("scripted backend needs a vocabulary".into()));
        }
        if config.hidden_size == 0 {
            return Err(Error::Config("hidden_size must be positive".into()));
        }
        let vocabulary = Vocabulary::new(config.tokens.iter().cloned(), config.mask_token.clone(), true);
        let mask = config.mask_token.clone();
        let mut triggers: HashMap<String, Vec<Trigger>> = HashMap::new();
        let mut anchors = Vec::new();
        for (i, fact) in config.facts.iter().enumerate() {
            let template =
                RelationTemplate::parse("planted", &fact.surface, TemplateStyle::NaturalLanguage, None)?;
            anchors.push(anchor(&template));
            let tokens: Vec<&str> = fact.object.split_whitespace().collect();
            for j in 0..tokens.len() {
                let span: Vec<&str> = tokens
                    .iter()
                    .enumerate()
                    .map(|(k, t)| if k == j { mask.as_str() } else { t })
                    .collect();
                let span = span.join(" ");
                // object filled with the span text, which contains the mask
                let query = render_template(&template, &fact.subject, ObjectSlot::Masked, &mask)?
                    .replacen(mask.as_str(), &span, 1);
                triggers.entry(query).or_default().push(Trigger {
                    plant: i,
                    gold: tokens[j].to_string(),
                });
            }
        }
        let descriptor = BackendDescriptor {
            backend_id: config.backend_id()?,
            mask_token: mask,
            hidden_size: config.hidden_size,
            max_tokens: config.max_tokens,
            vocabulary: Arc::new(vocabulary),
        };
        Ok(ScriptedBackend {
            config,
            descriptor,
            triggers,
            anchors,
        })
    }

    pub fn config(&self) -> &ScriptedConfig {
        &self.config
    }

    /// Logit bonus per token contributed by planted facts firing on `prompt`.
    fn bonuses(&self, prompt: &str) -> HashMap<&str, f64> {
        let mut bonus: HashMap<&str, f64> = HashMap::new();
        let mut starts = vec![0];
        starts.extend(
            prompt
                .char_indices()
                .filter(|(_, c)| c.is_whitespace())
                .map(|(i, c)| i + c.len_utf8()),
        );
        for start in starts {
            let Some(fired) = self.triggers.get(&prompt[start..]) else {
                continue;
            };
            let before = &prompt[..start];
            for trigger in fired {
                let demos = self.anchors[trigger.plant]
                    .as_deref()
                    .map_or(0, |a| before.matches(a).count());
                *bonus.entry(trigger.gold.as_str()).or_default() +=
                    self.config.gold_offset + self.config.boost(demos);
            }
        }
        bonus
    }

    fn distribution(&self, prompt: &str) -> Result<ScoreDistribution> {
        let tokens = prompt.split_whitespace().count();
        if tokens > self.config.max_tokens {
            return Err(Error::ContextLength {
                prompt: prompt.to_string(),
                tokens,
                limit: self.config.max_tokens,
            });
        }
        let bonus = self.bonuses(prompt);
        let vocab = &self.descriptor.vocabulary;
        let names: Vec<&str> = vocab.predictable().collect();
        let logits: Vec<f64> = names
            .iter()
            .map(|t| {
                self.config.base_scale * unit_hash(self.config.seed, &["fill", prompt, t])
                    + bonus.get(t).copied().unwrap_or(0.0)
            })
            .collect();
        let probs = softmax(&logits).expect("finite logits");
        let entries = names
            .into_iter()
            .zip(probs)
            .map(|(t, p)| TokenProb {
                token: t.to_string(),
                prob: p,
            })
            .collect();
        ScoreDistribution::new(prompt, entries, Coverage::Full)
    }

    fn noise(&self, label: &str, key: &str) -> Vec<f64> {
        (0..self.config.hidden_size)
            .map(|i| 2.0 * unit_hash(self.config.seed, &[label, key, &i.to_string()]) - 1.0)
            .collect()
    }

    fn embedding(&self, text: &str) -> Result<EmbeddingVector> {
        let own = self.noise("embed", text);
        let raw: Vec<f64> = match self.config.clusters.get(text) {
            Some(cluster) => self
                .noise("cluster", cluster)
                .iter()
                .zip(&own)
                .map(|(c, n)| c + self.config.cluster_spread * n)
                .collect(),
            None => own,
        };
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        EmbeddingVector::new(raw.into_iter().map(|v| v / norm).collect())
    }
}

/// Longest literal piece of a template, ignoring whitespace-only pieces.
fn anchor(template: &RelationTemplate) -> Option<String> {
    let mut best: Option<&str> = None;
    for piece in template.pieces() {
        if let Piece::Literal(text) = piece {
            if text.trim().is_empty() {
                continue;
            }
            if best.is_none_or(|b| text.len() > b.len()) {
                best = Some(text);
            }
        }
    }
    best.map(str::to_string)
}

impl Scorer for ScriptedBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn fill_mask_batch(
        &self,
        prompts: &[String],
        restrict: Option<&[String]>,
    ) -> Result<Vec<ScoreDistribution>> {
        prompts
            .iter()
            .map(|p| {
                let d = self.distribution(p)?;
                Ok(match restrict {
                    Some(r) => d.restricted(r),
                    None => d,
                })
            })
            .collect()
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        texts.iter().map(|t| self.embedding(t)).collect()
    }

    fn score_candidates_batch(
        &self,
        prompts: &[String],
        candidates: &[Vec<String>],
    ) -> Result<Vec<Vec<f64>>> {
        score_candidates_by_masking(self, prompts, candidates)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorer::{fill_mask, score_candidates, top_k, MASS_EPSILON};
    use crate::prompt::PromptString;

    fn isa() -> RelationTemplate {
        RelationTemplate::parse("is-a", "[s] is a [o] .", TemplateStyle::NaturalLanguage, None).unwrap()
    }

    fn backend() -> ScriptedBackend {
        let mut tokens = filler_tokens(30);
        tokens.extend(["village".to_string(), "town".to_string()]);
        let mut cfg = ScriptedConfig::new(tokens);
        cfg.plant(&isa(), "Rodmarton", "village");
        ScriptedBackend::new(cfg).unwrap()
    }

    fn prompt(text: &str) -> PromptString {
        PromptString::from_text(text, "[MASK]", TemplateStyle::NaturalLanguage)
    }

    #[test]
    fn unit_hash_reference_values() {
        // independent recomputation of the documented rule
        let mut h = Sha256::new();
        h.update(7u64.to_le_bytes());
        h.update(3u64.to_le_bytes());
        h.update(b"abc");
        let d = h.finalize();
        let x = u64::from_be_bytes(d[..8].try_into().unwrap());
        assert_eq!(unit_hash(7, &["abc"]), (x >> 11) as f64 / 9007199254740992.0);
        assert_ne!(unit_hash(7, &["ab", "c"]), unit_hash(7, &["a", "bc"]));
    }

    #[test]
    fn distribution_sums_to_one_and_is_deterministic() {
        let b = backend();
        let p = prompt("anything at all [MASK] .");
        let d1 = fill_mask(&b, &p, None).unwrap();
        let d2 = fill_mask(&b, &p, None).unwrap();
        assert!((d1.total_mass() - 1.0).abs() < MASS_EPSILON);
        assert_eq!(d1, d2);
        assert!(d1.prob("[MASK]") == 0.0);
    }

    #[test]
    fn gold_needs_a_demonstration() {
        let b = backend();
        let zero = fill_mask(&b, &prompt("Rodmarton is a [MASK] ."), None).unwrap();
        let one = fill_mask(&b, &prompt("Nantmor is a village . Rodmarton is a [MASK] ."), None).unwrap();
        assert_ne!(top_k(&zero, 1).top(), Some("village"));
        assert_eq!(top_k(&one, 1).top(), Some("village"));
        assert!(one.prob("village") > zero.prob("village"));
    }

    #[test]
    fn trigger_requires_word_boundary() {
        let b = backend();
        let d = fill_mask(&b, &prompt("Nantmor is a village . XRodmarton is a [MASK] ."), None).unwrap();
        assert!(d.prob("village") < 0.5);
    }

    #[test]
    fn restrict_to_singleton() {
        let b = backend();
        let d = fill_mask(&b, &prompt("x [MASK]"), Some(&["town".to_string()])).unwrap();
        assert_eq!(d.prob("town"), 1.0);
    }

    #[test]
    fn context_length_is_a_hard_error() {
        let mut cfg = ScriptedConfig::new(["a"]);
        cfg.max_tokens = 3;
        let b = ScriptedBackend::new(cfg).unwrap();
        let err = fill_mask(&b, &prompt("one two three [MASK]"), None).unwrap_err();
        assert!(matches!(err, Error::ContextLength { tokens: 4, limit: 3, .. }));
    }

    #[test]
    fn embeddings_follow_hash_rule() {
        let b = backend();
        let v = b.embed_batch(&["abc".to_string()]).unwrap().remove(0);
        let raw: Vec<f64> = (0..16)
            .map(|i| 2.0 * unit_hash(0, &["embed", "abc", &i.to_string()]) - 1.0)
            .collect();
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (a, r) in v.values().iter().zip(&raw) {
            assert!((a - r / norm).abs() < 1e-15);
        }
        assert_eq!(v.dimension(), b.descriptor().hidden_size);
    }

    #[test]
    fn clustered_subjects_are_close() {
        let mut cfg = ScriptedConfig::new(["a"]);
        cfg.cluster("Nantmor", "villages");
        cfg.cluster("Rodmarton", "villages");
        let b = ScriptedBackend::new(cfg).unwrap();
        let e = b
            .embed_batch(&["Nantmor".into(), "Rodmarton".into(), "Tisza".into()])
            .unwrap();
        let near = crate::sampler::cosine(&e[0], &e[1]).unwrap();
        let far = crate::sampler::cosine(&e[0], &e[2]).unwrap();
        assert!(near > 0.9, "{near}");
        assert!(near > far);
    }

    #[test]
    fn two_token_candidate_matches_hand_computation() {
        let mut cfg = ScriptedConfig::new(["kitchen", "cupboard", "table", "sink"]);
        let arrow = RelationTemplate::symbolic("at", TemplateStyle::ArrowDouble).unwrap();
        cfg.plant(&arrow, "plate", "kitchen cupboard");
        let b = ScriptedBackend::new(cfg).unwrap();
        let p = prompt("milk => sink plate => [MASK]");
        let cands = vec!["kitchen cupboard".to_string(), "sink".to_string()];
        let scores = score_candidates(&b, &p, &cands).unwrap();

        let full = |text: &str| b.fill_mask_batch(&[text.to_string()], None).unwrap().remove(0);
        let two = (full("milk => sink plate => [MASK] cupboard").prob("kitchen").ln()
            + full("milk => sink plate => kitchen [MASK]").prob("cupboard").ln())
            / 2.0;
        let one = full("milk => sink plate => [MASK]").prob("sink").ln();
        let expect = 1.0 / (1.0 + (one - two).exp());
        assert!((scores[0].1 - expect).abs() < 1e-12);
        assert!((scores[0].1 + scores[1].1 - 1.0).abs() < 1e-12);
        assert!(scores[0].1 > 0.5);
    }

    #[test]
    fn single_token_candidates_agree_with_restrict() {
        let b = backend();
        let p = prompt("Nantmor is a village . Rodmarton is a [MASK] .");
        let cands = vec!["village".to_string(), "town".to_string(), "w001".to_string()];
        let scored = score_candidates(&b, &p, &cands).unwrap();
        let restricted = fill_mask(&b, &p, Some(&cands)).unwrap();
        for (c, s) in scored {
            assert!((s - restricted.prob(&c)).abs() < 1e-12);
        }
        let one = score_candidates(&b, &p, &["town".to_string()]).unwrap();
        assert!((one[0].1 - 1.0).abs() < 1e-15);
        assert!(score_candidates(&b, &p, &[]).is_err());
    }

    #[test]
    fn backend_id_tracks_config() {
        let a = ScriptedBackend::new(ScriptedConfig::new(["a"])).unwrap();
        let b = ScriptedBackend::new(ScriptedConfig::new(["a"]).with_seed(1)).unwrap();
        assert_ne!(a.descriptor().backend_id, b.descriptor().backend_id);
    }
}
