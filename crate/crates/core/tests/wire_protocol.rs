//! The HTTP client against an in-process server that speaks the provider
//! protocol, backed by the mock provider.

use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::{mpsc, Arc};
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use posbias::backend::conformance::run_conformance;
use posbias::backend::wire::{
    EmbedImagesRequest, EmbedTokensRequest, EmbeddingsResponse, ErrorResponse, TokenizeRequest, TokenizeResponse,
    EMBED_IMAGES_PATH, EMBED_TOKENS_PATH, INFO_PATH, TOKENIZE_PATH,
};
use posbias::backend::{EmbeddingProvider, HttpProvider, MockProvider, RetryPolicy};
use posbias::imageprobe::ImageCanvas;
use posbias::Error;

#[derive(Clone, Copy)]
enum Fault {
    None,
    /// Answer this status for the first `n` requests, then behave.
    Status(u16, u32),
    /// 200 with a body that is not JSON.
    Garbage,
    /// 200 with one embedding too few.
    Short,
}

struct Server {
    mock: MockProvider,
    fault: Fault,
    requests: AtomicU32,
}

type Shared = Arc<Server>;

fn error(status: StatusCode, message: String) -> Response {
    (status, Json(ErrorResponse { error: message })).into_response()
}

impl Server {
    fn inject(&self) -> Option<Response> {
        let n = self.requests.fetch_add(1, Ordering::SeqCst);
        match self.fault {
            Fault::Status(code, times) if n < times => Some(error(
                StatusCode::from_u16(code).unwrap(),
                format!("injected failure {}", n + 1),
            )),
            Fault::Garbage => Some((StatusCode::OK, "{not json").into_response()),
            _ => None,
        }
    }

    fn embeddings(&self, result: posbias::Result<Vec<Vec<f32>>>) -> Response {
        match result {
            Ok(mut embeddings) => {
                if matches!(self.fault, Fault::Short) {
                    embeddings.pop();
                }
                Json(EmbeddingsResponse { embeddings }).into_response()
            }
            Err(e) => error(StatusCode::BAD_REQUEST, e.to_string()),
        }
    }
}

async fn info(State(s): State<Shared>) -> Response {
    if let Some(r) = s.inject() {
        return r;
    }
    Json(s.mock.info().unwrap()).into_response()
}

async fn tokenize(State(s): State<Shared>, Json(req): Json<TokenizeRequest>) -> Response {
    if let Some(r) = s.inject() {
        return r;
    }
    match s.mock.tokenize(&req.texts) {
        Ok(toks) => Json(TokenizeResponse {
            truncated: toks.iter().map(|t| t.truncated).collect(),
            token_ids: toks.into_iter().map(|t| t.ids).collect(),
        })
        .into_response(),
        Err(e) => error(StatusCode::BAD_REQUEST, e.to_string()),
    }
}

async fn embed_tokens(State(s): State<Shared>, Json(req): Json<EmbedTokensRequest>) -> Response {
    if let Some(r) = s.inject() {
        return r;
    }
    s.embeddings(s.mock.embed_tokens(&req.token_ids))
}

async fn embed_images(State(s): State<Shared>, Json(req): Json<EmbedImagesRequest>) -> Response {
    if let Some(r) = s.inject() {
        return r;
    }
    let pngs: Result<Vec<Vec<u8>>, _> = req.images_png_b64.iter().map(|b| B64.decode(b)).collect();
    match pngs {
        Ok(pngs) => s.embeddings(s.mock.embed_images(&pngs)),
        Err(e) => error(StatusCode::BAD_REQUEST, e.to_string()),
    }
}

/// Starts a server on an ephemeral port and returns its base URL. The
/// runtime lives on a detached thread for the rest of the test process.
fn serve(fault: Fault) -> (String, Shared) {
    let state = Arc::new(Server {
        mock: MockProvider::new(),
        fault,
        requests: AtomicU32::new(0),
    });
    let app = Router::new()
        .route(INFO_PATH, get(info))
        .route(TOKENIZE_PATH, post(tokenize))
        .route(EMBED_TOKENS_PATH, post(embed_tokens))
        .route(EMBED_IMAGES_PATH, post(embed_images))
        .with_state(state.clone());
    let (tx, rx) = mpsc::channel();
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
    let addr = rx.recv().unwrap();
    (format!("http://{addr}"), state)
}

fn client(url: &str, attempts: u32) -> HttpProvider {
    HttpProvider::with_retry(
        url,
        RetryPolicy {
            attempts,
            initial_backoff: Duration::from_millis(5),
        },
    )
    .unwrap()
}

fn png(seed: u8) -> Vec<u8> {
    let pixels = (0..40 * 30 * 3).map(|i| (i as u8).wrapping_mul(seed)).collect();
    ImageCanvas::new(40, 30, pixels).unwrap().encode_png().unwrap()
}

#[test]
fn conformance_over_http() {
    let (url, _) = serve(Fault::None);
    let checks = run_conformance(&client(&url, 1));
    assert_eq!(checks.len(), 6);
    for c in &checks {
        assert!(c.passed, "{}: {}", c.name, c.detail);
    }
}

#[test]
fn http_matches_in_process_mock() {
    let (url, _) = serve(Fault::None);
    let http = client(&url, 1);
    let local = MockProvider::new();
    assert_eq!(http.info().unwrap(), local.info().unwrap());

    let texts = vec!["a red bicycle leaning on a wall.".to_string(), String::new()];
    let remote_toks = http.tokenize(&texts).unwrap();
    assert_eq!(remote_toks, local.tokenize(&texts).unwrap());

    let ids: Vec<Vec<u32>> = remote_toks
        .into_iter()
        .map(|t| {
            let mut ids = t.ids;
            ids.resize(77, 0);
            ids
        })
        .collect();
    assert_eq!(http.embed_tokens(&ids).unwrap(), local.embed_tokens(&ids).unwrap());

    let pngs = vec![png(3), png(7), png(3)];
    let remote = http.embed_images(&pngs).unwrap();
    assert_eq!(remote, local.embed_images(&pngs).unwrap());
    assert_eq!(remote[0], remote[2]);
}

#[test]
fn server_errors_are_retried() {
    let (url, state) = serve(Fault::Status(500, 2));
    let info = client(&url, 3).info().unwrap();
    assert_eq!(info.profile.model_id, "mock-clip-b16");
    assert_eq!(state.requests.load(Ordering::SeqCst), 3);
}

#[test]
fn retries_are_bounded() {
    let (url, state) = serve(Fault::Status(503, u32::MAX));
    match client(&url, 3).info() {
        Err(Error::Provider {
            attempts, retryable, ..
        }) => {
            assert_eq!(attempts, 3);
            assert!(retryable);
        }
        other => panic!("expected a provider error, got {other:?}"),
    }
    assert_eq!(state.requests.load(Ordering::SeqCst), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let (url, state) = serve(Fault::Status(400, u32::MAX));
    let err = client(&url, 5).tokenize(&["x".into()]).unwrap_err();
    match &err {
        Error::Provider {
            attempts, retryable, ..
        } => {
            assert_eq!(*attempts, 1);
            assert!(!retryable);
        }
        other => panic!("expected a provider error, got {other:?}"),
    }
    assert!(err.to_string().contains("injected failure 1"), "{err}");
    assert_eq!(state.requests.load(Ordering::SeqCst), 1);
}

#[test]
fn malformed_body_is_a_protocol_error() {
    let (url, _) = serve(Fault::Garbage);
    let err = client(&url, 3).info().unwrap_err();
    assert!(matches!(err, Error::Protocol(_)), "{err:?}");
}

#[test]
fn short_batch_is_a_protocol_error() {
    let (url, _) = serve(Fault::Short);
    let err = client(&url, 1).embed_images(&[png(1), png(2)]).unwrap_err();
    assert!(matches!(err, Error::Protocol(_)), "{err:?}");
}
