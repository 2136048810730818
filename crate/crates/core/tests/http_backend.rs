//! The HTTP client against an in-process server that wraps the scripted backend.

mod common;

use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Value};

use lmprobe::eval::{run_probe, ProbeConfig, Selection};
use lmprobe::sampler::EmbeddingStore;
use lmprobe::scorer::{CachedScorer, HttpOptions, HttpScorer, RetryPolicy, Scorer, ScriptedBackend};
use lmprobe::Error;

struct Mock {
    backend: ScriptedBackend,
    /// Requests still to be answered with 503.
    unavailable: AtomicUsize,
    /// (path, batch length) of every request received.
    log: Mutex<Vec<(String, usize)>>,
}

type Shared = Arc<Mock>;

impl Mock {
    fn record(&self, path: &str, n: usize) -> Option<Response> {
        self.log.lock().unwrap().push((path.to_string(), n));
        let left = self.unavailable.load(Ordering::SeqCst);
        if left > 0 {
            self.unavailable.store(left - 1, Ordering::SeqCst);
            return Some((StatusCode::SERVICE_UNAVAILABLE, Json(json!({"error": "warming up"}))).into_response());
        }
        None
    }
}

fn bad_request(e: Error) -> Response {
    (StatusCode::BAD_REQUEST, Json(json!({"error": e.to_string()}))).into_response()
}

fn strings(v: &Value) -> Vec<String> {
    v.as_array()
        .map(|a| a.iter().filter_map(|s| s.as_str().map(String::from)).collect())
        .unwrap_or_default()
}

async fn meta(State(m): State<Shared>) -> Response {
    if let Some(r) = m.record("/meta", 0) {
        return r;
    }
    let d = m.backend.descriptor();
    Json(json!({
        "backend_id": d.backend_id,
        "mask_token": d.mask_token,
        "hidden_size": d.hidden_size,
        "max_tokens": d.max_tokens,
    }))
    .into_response()
}

async fn vocab(State(m): State<Shared>) -> Response {
    if let Some(r) = m.record("/vocab", 0) {
        return r;
    }
    m.backend.descriptor().vocabulary.tokens().join("\n").into_response()
}

async fn fill_mask(State(m): State<Shared>, Json(body): Json<Value>) -> Response {
    let prompts = strings(&body["prompts"]);
    if let Some(r) = m.record("/fill_mask", prompts.len()) {
        return r;
    }
    let restrict = body.get("restrict").map(strings);
    match m.backend.fill_mask_batch(&prompts, restrict.as_deref()) {
        Ok(dists) => {
            let results: Vec<_> = dists.iter().map(|d| d.entries().to_vec()).collect();
            Json(json!({ "results": results })).into_response()
        }
        Err(e) => bad_request(e),
    }
}

async fn embed(State(m): State<Shared>, Json(body): Json<Value>) -> Response {
    let texts = strings(&body["texts"]);
    if let Some(r) = m.record("/embed", texts.len()) {
        return r;
    }
    match m.backend.embed_batch(&texts) {
        Ok(vs) => {
            let vectors: Vec<_> = vs.iter().map(|v| v.values().to_vec()).collect();
            Json(json!({ "vectors": vectors })).into_response()
        }
        Err(e) => bad_request(e),
    }
}

async fn score(State(m): State<Shared>, Json(body): Json<Value>) -> Response {
    let prompts = strings(&body["prompts"]);
    if let Some(r) = m.record("/score_candidates", prompts.len()) {
        return r;
    }
    let candidates: Vec<Vec<String>> = body["candidates"]
        .as_array()
        .map(|a| a.iter().map(strings).collect())
        .unwrap_or_default();
    match m.backend.score_candidates_batch(&prompts, &candidates) {
        Ok(scores) => Json(json!({ "scores": scores })).into_response(),
        Err(e) => bad_request(e),
    }
}

/// Serve `backend` on an ephemeral port from a dedicated runtime thread.
fn serve(backend: ScriptedBackend) -> (String, Shared) {
    let mock = Arc::new(Mock {
        backend,
        unavailable: AtomicUsize::new(0),
        log: Mutex::new(Vec::new()),
    });
    let app = Router::new()
        .route("/meta", get(meta))
        .route("/vocab", get(vocab))
        .route("/fill_mask", post(fill_mask))
        .route("/embed", post(embed))
        .route("/score_candidates", post(score))
        .with_state(mock.clone());
    let (tx, rx) = std::sync::mpsc::channel::<SocketAddr>();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    let addr = rx.recv_timeout(Duration::from_secs(10)).unwrap();
    (format!("http://{addr}"), mock)
}

fn options(batch_size: usize, attempts: usize) -> HttpOptions {
    HttpOptions {
        timeout: Duration::from_secs(10),
        retry: RetryPolicy {
            max_attempts: attempts,
            initial_backoff: Duration::from_millis(1),
            max_backoff: Duration::from_millis(5),
        },
        batch_size,
        case_sensitive: true,
    }
}

fn started() -> (String, Shared, ScriptedBackend) {
    let (_, backend) = common::planted();
    let (_, twin) = common::planted();
    let (url, mock) = serve(backend);
    (url, mock, twin)
}

fn prompts(n: usize) -> Vec<String> {
    ["Paris", "Rome", "Tokyo", "Oslo", "Lima", "Cairo", "Delhi", "Quito"]
        .iter()
        .cycle()
        .take(n)
        .enumerate()
        .map(|(i, s)| format!("{s} is the capital of [MASK] . {i}"))
        .collect()
}

fn requests(mock: &Mock, path: &str) -> Vec<usize> {
    mock.log
        .lock()
        .unwrap()
        .iter()
        .filter(|(p, _)| p == path)
        .map(|(_, n)| *n)
        .collect()
}

#[test]
fn connect_reads_meta_and_vocab() {
    let (url, _, direct) = started();
    let http = HttpScorer::connect(&format!("{url}/"), options(32, 1)).unwrap();
    let (a, b) = (http.descriptor(), direct.descriptor());
    assert_eq!(a.backend_id, b.backend_id);
    assert_eq!(a.mask_token, b.mask_token);
    assert_eq!(a.hidden_size, b.hidden_size);
    assert_eq!(a.max_tokens, b.max_tokens);
    assert_eq!(a.vocabulary.tokens(), b.vocabulary.tokens());
    assert_eq!(http.base_url(), url);
}

#[test]
fn fill_mask_is_chunked_and_order_preserving() {
    let (url, mock, direct) = started();
    let http = HttpScorer::connect(&url, options(3, 1)).unwrap();
    let ps = prompts(7);
    let got = http.fill_mask_batch(&ps, None).unwrap();
    let want = direct.fill_mask_batch(&ps, None).unwrap();
    assert_eq!(got.len(), 7);
    for (g, w) in got.iter().zip(&want) {
        assert_eq!(g.entries(), w.entries());
        assert_eq!(g.prompt_digest(), w.prompt_digest());
    }
    assert_eq!(requests(&mock, "/fill_mask"), vec![3, 3, 1]);
}

#[test]
fn restricted_fill_mask_round_trips() {
    let (url, _, direct) = started();
    let http = HttpScorer::connect(&url, options(32, 1)).unwrap();
    let ps = prompts(2);
    let restrict = vec!["Paris".to_string(), "Rome".to_string(), "Oslo".to_string()];
    let got = http.fill_mask_batch(&ps, Some(&restrict)).unwrap();
    let want = direct.fill_mask_batch(&ps, Some(&restrict)).unwrap();
    for (g, w) in got.iter().zip(&want) {
        assert_eq!(g.entries(), w.entries());
        assert_eq!(g.coverage(), w.coverage());
    }
}

#[test]
fn embeddings_and_candidate_scores_match_the_direct_backend() {
    let (url, mock, direct) = started();
    let http = HttpScorer::connect(&url, options(2, 1)).unwrap();
    let texts: Vec<String> = ["Paris", "Rome", "Oslo"].iter().map(|s| s.to_string()).collect();
    assert_eq!(http.embed_batch(&texts).unwrap(), direct.embed_batch(&texts).unwrap());
    assert_eq!(requests(&mock, "/embed"), vec![2, 1]);

    let ps = prompts(3);
    let cands = vec![
        vec!["Paris".to_string(), "Rome".to_string()],
        vec!["Oslo".to_string()],
        vec!["Berlin".to_string(), "Madrid".to_string(), "Vienna".to_string()],
    ];
    let got = http.score_candidates_batch(&ps, &cands).unwrap();
    assert_eq!(got, direct.score_candidates_batch(&ps, &cands).unwrap());
    assert_eq!(requests(&mock, "/score_candidates"), vec![2, 1]);
}

#[test]
fn unavailable_server_is_retried() {
    let (url, mock, _) = started();
    let http = HttpScorer::connect(&url, options(32, 4)).unwrap();
    mock.unavailable.store(2, Ordering::SeqCst);
    let got = http.fill_mask_batch(&prompts(1), None).unwrap();
    assert_eq!(got.len(), 1);
    assert_eq!(requests(&mock, "/fill_mask"), vec![1, 1, 1]);
}

#[test]
fn retries_are_bounded() {
    let (url, mock, _) = started();
    let http = HttpScorer::connect(&url, options(32, 3)).unwrap();
    mock.unavailable.store(10, Ordering::SeqCst);
    let err = http.fill_mask_batch(&prompts(1), None).unwrap_err();
    assert!(matches!(err, Error::Transport { attempts: 3, .. }), "{err}");
    assert!(err.to_string().contains("warming up"), "{err}");
    assert_eq!(requests(&mock, "/fill_mask").len(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let (url, mock, _) = started();
    let http = HttpScorer::connect(&url, options(32, 4)).unwrap();
    // candidates outside the vocabulary are rejected by the server
    let err = http
        .score_candidates_batch(&prompts(1), &[vec!["Atlantis".to_string()]])
        .unwrap_err();
    assert!(matches!(err, Error::Backend(_)), "{err}");
    assert!(err.to_string().contains("400"), "{err}");
    assert!(!err.is_retryable());
    assert_eq!(requests(&mock, "/score_candidates").len(), 1);
}

#[test]
fn cache_avoids_repeat_requests() {
    let (url, mock, _) = started();
    let cached = CachedScorer::in_memory(HttpScorer::connect(&url, options(32, 1)).unwrap());
    let ps = prompts(4);
    let first = cached.fill_mask_batch(&ps, None).unwrap();
    let second = cached.fill_mask_batch(&ps, None).unwrap();
    assert_eq!(first, second);
    assert_eq!(requests(&mock, "/fill_mask"), vec![4]);
}

#[test]
fn probe_over_http_matches_the_direct_backend() {
    let (dataset, direct) = common::planted();
    let (url, _) = serve(common::planted().1);
    let http = HttpScorer::connect(&url, options(8, 1)).unwrap();
    let config = ProbeConfig {
        n_demos: 3,
        selection: Selection::Close { k_pool: None },
        trials: 2,
        ..ProbeConfig::default()
    };
    let over_http = run_probe(&dataset, &config, &http, &EmbeddingStore::in_memory()).unwrap();
    let local = run_probe(&dataset, &config, &direct, &EmbeddingStore::in_memory()).unwrap();
    assert_eq!(over_http, local);
}
