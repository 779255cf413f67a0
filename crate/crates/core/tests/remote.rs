use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use nli_consistency::nli::{
    BackendId, HealthResponse, NliBackend, NliRequest, NliResponse, RemoteBackend, RemoteConfig,
};
use nli_consistency::Error;

#[derive(Default)]
struct Server {
    requests: AtomicUsize,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
    batch_sizes: std::sync::Mutex<Vec<usize>>,
    /// Number of leading requests answered with 503.
    fail_first: usize,
    /// Status returned for every request, overriding normal behavior.
    always: Option<StatusCode>,
    /// Drop the last triple of every response.
    short: bool,
    delay: Duration,
    ready_after: usize,
    health_calls: AtomicUsize,
}

/// Encodes the pair index (from the premise text "p<i>") into the entailment
/// probability so tests can check ordering.
fn probs_for(premise: &str) -> [f64; 3] {
    let i: f64 = premise.trim_start_matches('p').parse().unwrap_or(0.0);
    let e = i / 1000.0;
    [e, (1.0 - e) / 2.0, (1.0 - e) / 2.0]
}

async fn nli(State(s): State<Arc<Server>>, Json(req): Json<NliRequest>) -> Response {
    let n = s.requests.fetch_add(1, Ordering::SeqCst);
    if let Some(code) = s.always {
        return (code, "nope").into_response();
    }
    if n < s.fail_first {
        return (StatusCode::SERVICE_UNAVAILABLE, "warming up").into_response();
    }
    let now = s.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    s.max_in_flight.fetch_max(now, Ordering::SeqCst);
    s.batch_sizes.lock().unwrap().push(req.pairs.len());
    tokio::time::sleep(s.delay).await;
    s.in_flight.fetch_sub(1, Ordering::SeqCst);
    let mut probs: Vec<[f64; 3]> = req.pairs.iter().map(|p| probs_for(&p.premise)).collect();
    if s.short {
        probs.pop();
    }
    Json(NliResponse { probs }).into_response()
}

async fn health(State(s): State<Arc<Server>>) -> Json<HealthResponse> {
    let n = s.health_calls.fetch_add(1, Ordering::SeqCst);
    Json(HealthResponse {
        model: "test-model".into(),
        ready: n >= s.ready_after,
    })
}

fn serve(server: Server) -> (SocketAddr, Arc<Server>) {
    let state = Arc::new(server);
    let shared = state.clone();
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        tokio::runtime::Runtime::new().unwrap().block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            let app = Router::new()
                .route("/nli", post(nli))
                .route("/health", get(health))
                .with_state(shared);
            axum::serve(listener, app).await.unwrap();
        });
    });
    (rx.recv().unwrap(), state)
}

fn client(addr: SocketAddr, batch_size: usize) -> RemoteBackend {
    let mut cfg = RemoteConfig::new(format!("http://{addr}"));
    cfg.batch_size = batch_size;
    cfg.timeout = Duration::from_secs(10);
    RemoteBackend::new(BackendId::new("remote-test", "1").unwrap(), cfg).unwrap()
}

fn pairs(n: usize) -> Vec<(String, String)> {
    (0..n).map(|i| (format!("p{i}"), format!("h{i}"))).collect()
}

fn refs(p: &[(String, String)]) -> Vec<(&str, &str)> {
    p.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect()
}

#[test]
fn sixty_four_pair_batch_round_trips_in_order() {
    let (addr, state) = serve(Server::default());
    let p = pairs(64);
    let out = client(addr, 64).score_pairs(&refs(&p)).unwrap();
    assert_eq!(out.len(), 64);
    for (i, probs) in out.iter().enumerate() {
        assert_eq!(probs.as_array(), probs_for(&format!("p{i}")));
    }
    assert_eq!(state.requests.load(Ordering::SeqCst), 1);
}

#[test]
fn large_inputs_are_batched_with_bounded_concurrency() {
    let (addr, state) = serve(Server {
        delay: Duration::from_millis(50),
        ..Server::default()
    });
    let p = pairs(600);
    let out = client(addr, 64).score_pairs(&refs(&p)).unwrap();
    for (i, probs) in out.iter().enumerate() {
        assert_eq!(probs.e, i as f64 / 1000.0, "pair {i} out of order");
    }
    let mut sizes = state.batch_sizes.lock().unwrap().clone();
    sizes.sort_unstable();
    assert_eq!(sizes.len(), 10);
    assert_eq!(sizes[0], 600 - 9 * 64);
    assert!(sizes[1..].iter().all(|&s| s == 64));
    let peak = state.max_in_flight.load(Ordering::SeqCst);
    assert!((2..=4).contains(&peak), "peak concurrency {peak}");
}

#[test]
fn a_transient_failure_is_retried_once() {
    let (addr, state) = serve(Server {
        fail_first: 1,
        ..Server::default()
    });
    let p = pairs(3);
    let out = client(addr, 64).score_pairs(&refs(&p)).unwrap();
    assert_eq!(out.len(), 3);
    assert_eq!(state.requests.load(Ordering::SeqCst), 2);
}

#[test]
fn persistent_server_errors_surface_as_backend_errors() {
    let (addr, state) = serve(Server {
        always: Some(StatusCode::SERVICE_UNAVAILABLE),
        ..Server::default()
    });
    let p = pairs(3);
    let err = client(addr, 64).score_pairs(&refs(&p)).unwrap_err();
    assert!(matches!(err, Error::BackendUnavailable(_)), "{err:?}");
    assert_eq!(state.requests.load(Ordering::SeqCst), 2, "one try plus one retry");
}

#[test]
fn client_errors_are_not_retried() {
    let (addr, state) = serve(Server {
        always: Some(StatusCode::BAD_REQUEST),
        ..Server::default()
    });
    let p = pairs(2);
    let err = client(addr, 64).score_pairs(&refs(&p)).unwrap_err();
    assert!(matches!(err, Error::BackendUnavailable(_)));
    assert_eq!(state.requests.load(Ordering::SeqCst), 1);
}

#[test]
fn length_mismatch_is_rejected() {
    let (addr, _) = serve(Server {
        short: true,
        ..Server::default()
    });
    let p = pairs(5);
    assert!(matches!(
        client(addr, 64).score_pairs(&refs(&p)),
        Err(Error::BackendUnavailable(_))
    ));
}

#[test]
fn health_polling_waits_for_readiness() {
    let (addr, state) = serve(Server {
        ready_after: 3,
        ..Server::default()
    });
    let c = client(addr, 64);
    assert!(!c.health().unwrap().ready);
    c.wait_until_ready(Duration::from_secs(5)).unwrap();
    assert!(state.health_calls.load(Ordering::SeqCst) >= 4);
}

#[test]
fn readiness_timeout_is_a_backend_error() {
    let (addr, _) = serve(Server {
        ready_after: usize::MAX,
        ..Server::default()
    });
    let err = client(addr, 64)
        .wait_until_ready(Duration::from_millis(200))
        .unwrap_err();
    assert!(matches!(err, Error::BackendUnavailable(_)));
}
