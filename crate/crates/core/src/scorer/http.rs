//! Client for the model-server wire protocol.
//!
//! ```text
//! GET  /meta              -> {"backend_id", "mask_token", "hidden_size", "max_tokens"}
//! GET  /vocab             -> newline-separated tokens
//! POST /fill_mask         {"prompts": [..], "restrict": [..]?} -> {"results": [[{"token", "prob"}]]}
//! POST /embed             {"texts": [..]}                      -> {"vectors": [[..]]}
//! POST /score_candidates  {"prompts": [..], "candidates": [[..]]} -> {"scores": [[..]]}
//! ```
//!
//! Non-2xx responses carry `{"error": "..."}`.

use std::sync::Arc;
use std::time::Duration;

use reqwest::blocking::{Client, RequestBuilder, Response};
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{BackendDescriptor, Coverage, ScoreDistribution, Scorer, TokenProb};
use crate::corpus::parse_vocabulary;
use crate::error::{Error, Result};
use crate::sampler::EmbeddingVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: usize,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 4,
            initial_backoff: Duration::from_millis(200),
            max_backoff: Duration::from_secs(5),
        }
    }
}

impl RetryPolicy {
    fn backoff(&self, attempt: usize) -> Duration {
        let factor = 1u32 << attempt.min(16);
        (self.initial_backoff * factor).min(self.max_backoff)
    }
}

#[derive(Debug, Clone)]
pub struct HttpOptions {
    pub timeout: Duration,
    pub retry: RetryPolicy,
    /// Maximum prompts per request.
    pub batch_size: usize,
    /// Vocabulary case handling for single-token checks.
    pub case_sensitive: bool,
}

impl Default for HttpOptions {
    fn default() -> Self {
        HttpOptions {
            timeout: Duration::from_secs(120),
            retry: RetryPolicy::default(),
            batch_size: 32,
            case_sensitive: true,
        }
    }
}

#[derive(Deserialize)]
struct Meta {
    backend_id: String,
    mask_token: String,
    hidden_size: usize,
    max_tokens: usize,
}

#[derive(Serialize)]
struct FillMaskRequest<'a> {
    prompts: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    restrict: Option<&'a [String]>,
}

#[derive(Deserialize)]
struct FillMaskResponse {
    results: Vec<Vec<TokenProb>>,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    prompts: &'a [String],
    candidates: &'a [Vec<String>],
}

#[derive(Deserialize)]
struct ScoreResponse {
    scores: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct ErrorBody {
    error: String,
}

/// Blocking HTTP backend with bounded retries.
pub struct HttpScorer {
    base: String,
    client: Client,
    options: HttpOptions,
    descriptor: BackendDescriptor,
}

impl HttpScorer {
    /// Fetch `/meta` and `/vocab` and build the backend descriptor.
    pub fn connect(base_url: &str, options: HttpOptions) -> Result<Self> {
        let client = Client::builder()
            .timeout(options.timeout)
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        let base = base_url.trim_end_matches('/').to_string();
        let mut scorer = HttpScorer {
            base,
            client,
            options,
            descriptor: BackendDescriptor {
                backend_id: String::new(),
                mask_token: String::new(),
                hidden_size: 0,
                max_tokens: 0,
                vocabulary: Arc::new(parse_vocabulary("", "[MASK]", true)),
            },
        };
        let meta: Meta = scorer.send_json(|c, base| c.get(format!("{base}/meta")))?;
        let vocab_text = scorer.send(|c, base| c.get(format!("{base}/vocab")))?;
        let vocab_text = vocab_text
            .text()
            .map_err(|e| Error::Backend(format!("reading /vocab: {e}")))?;
        scorer.descriptor = BackendDescriptor {
            vocabulary: Arc::new(parse_vocabulary(
                &vocab_text,
                &meta.mask_token,
                scorer.options.case_sensitive,
            )),
            backend_id: meta.backend_id,
            mask_token: meta.mask_token,
            hidden_size: meta.hidden_size,
            max_tokens: meta.max_tokens,
        };
        Ok(scorer)
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    /// Issue a request, retrying transport failures, 429 and 5xx responses.
    fn send<F>(&self, build: F) -> Result<Response>
    where
        F: Fn(&Client, &str) -> RequestBuilder,
    {
        let policy = self.options.retry;
        let attempts = policy.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(policy.backoff(attempt - 1));
            }
            match build(&self.client, &self.base).send() {
                Ok(resp) if resp.status().is_success() => return Ok(resp),
                Ok(resp) => {
                    let status = resp.status();
                    let body = resp.text().unwrap_or_default();
                    let message = serde_json::from_str::<ErrorBody>(&body)
                        .map(|b| b.error)
                        .unwrap_or(body);
                    if status.is_server_error() || status == StatusCode::TOO_MANY_REQUESTS {
                        log::warn!("attempt {} failed with {status}: {message}", attempt + 1);
                        last = format!("{status}: {message}");
                        continue;
                    }
                    return Err(Error::Backend(format!("{status}: {message}")));
                }
                Err(e) => {
                    log::warn!("attempt {} failed: {e}", attempt + 1);
                    last = e.to_string();
                }
            }
        }
        Err(Error::Transport {
            attempts,
            message: last,
        })
    }

    fn send_json<T, F>(&self, build: F) -> Result<T>
    where
        T: DeserializeOwned,
        F: Fn(&Client, &str) -> RequestBuilder,
    {
        self.send(build)?
            .json()
            .map_err(|e| Error::Backend(format!("malformed response: {e}")))
    }

    fn chunks<'a, T>(&self, items: &'a [T]) -> std::slice::Chunks<'a, T> {
        items.chunks(self.options.batch_size.max(1))
    }
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Backend(format!("{what}: {got} results for {want} inputs")));
    }
    Ok(())
}

impl Scorer for HttpScorer {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn fill_mask_batch(
        &self,
        prompts: &[String],
        restrict: Option<&[String]>,
    ) -> Result<Vec<ScoreDistribution>> {
        let mut out = Vec::with_capacity(prompts.len());
        for chunk in self.chunks(prompts) {
            let body = FillMaskRequest {
                prompts: chunk,
                restrict,
            };
            let resp: FillMaskResponse =
                self.send_json(|c, base| c.post(format!("{base}/fill_mask")).json(&body))?;
            check_len("/fill_mask", resp.results.len(), chunk.len())?;
            for (prompt, entries) in chunk.iter().zip(resp.results) {
                let coverage = match restrict {
                    Some(r) => Coverage::Restricted(r.to_vec()),
                    None => Coverage::TopN(entries.len()),
                };
                out.push(ScoreDistribution::new(prompt, entries, coverage)?);
            }
        }
        Ok(out)
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in self.chunks(texts) {
            let body = EmbedRequest { texts: chunk };
            let resp: EmbedResponse =
                self.send_json(|c, base| c.post(format!("{base}/embed")).json(&body))?;
            check_len("/embed", resp.vectors.len(), chunk.len())?;
            for v in resp.vectors {
                out.push(EmbeddingVector::new(v)?);
            }
        }
        Ok(out)
    }

    fn score_candidates_batch(
        &self,
        prompts: &[String],
        candidates: &[Vec<String>],
    ) -> Result<Vec<Vec<f64>>> {
        check_len("score_candidates request", candidates.len(), prompts.len())?;
        let size = self.options.batch_size.max(1);
        let mut out = Vec::with_capacity(prompts.len());
        for (p, c) in prompts.chunks(size).zip(candidates.chunks(size)) {
            let body = ScoreRequest {
                prompts: p,
                candidates: c,
            };
            let resp: ScoreResponse =
                self.send_json(|cl, base| cl.post(format!("{base}/score_candidates")).json(&body))?;
            check_len("/score_candidates", resp.scores.len(), p.len())?;
            for (row, cands) in resp.scores.iter().zip(c) {
                check_len("/score_candidates row", row.len(), cands.len())?;
            }
            out.extend(resp.scores);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_grows_and_caps() {
        let p = RetryPolicy {
            max_attempts: 5,
            initial_backoff: Duration::from_millis(100),
            max_backoff: Duration::from_millis(350),
        };
        assert_eq!(p.backoff(0), Duration::from_millis(100));
        assert_eq!(p.backoff(1), Duration::from_millis(200));
        assert_eq!(p.backoff(2), Duration::from_millis(350));
    }

    #[test]
    fn unreachable_server_is_a_transport_error() {
        let opts = HttpOptions {
            timeout: Duration::from_millis(200),
            retry: RetryPolicy {
                max_attempts: 2,
                initial_backoff: Duration::from_millis(1),
                max_backoff: Duration::from_millis(1),
            },
            ..HttpOptions::default()
        };
        // port 9 (discard) is essentially never served locally
        let err = HttpScorer::connect("http://127.0.0.1:9", opts).err().unwrap();
        assert!(matches!(err, Error::Transport { attempts: 2, .. }), "{err}");
        assert!(err.is_retryable());
    }
}
