//! Talking to an NLI inference service over HTTP.
//!
//! Starts a small in-process server that implements `POST /nli` and
//! `GET /health` with the token-overlap formula, then scores a pair through
//! the HTTP client backend in batches of four.

use std::net::SocketAddr;
use std::time::Duration;

use axum::routing::{get, post};
use axum::{Json, Router};
use nli_consistency::aggregator::{score_zs, ScoreBreakdown, ZsConfig};
use nli_consistency::matrix::matrix_for_texts;
use nli_consistency::nli::{mock_score, BackendId, HealthResponse, NliRequest, NliResponse, RemoteBackend, RemoteConfig};
use nli_consistency::segmenter::Granularity;

async fn nli(Json(req): Json<NliRequest>) -> Json<NliResponse> {
    let probs = req
        .pairs
        .iter()
        .map(|p| mock_score(&p.premise, &p.hypothesis).map_or([0.0, 0.0, 1.0], |s| s.as_array()))
        .collect();
    Json(NliResponse { probs })
}

async fn health() -> Json<HealthResponse> {
    Json(HealthResponse {
        model: "overlap-demo".into(),
        ready: true,
    })
}

/// Serves the demo protocol on an ephemeral port from a background thread.
fn start_server() -> SocketAddr {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().expect("tokio runtime");
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.expect("bind");
            tx.send(listener.local_addr().expect("local addr")).expect("main thread waits");
            let app = Router::new().route("/nli", post(nli)).route("/health", get(health));
            axum::serve(listener, app).await.expect("server");
        });
    });
    rx.recv().expect("server address")
}

pub fn run_example() -> nli_consistency::Result<ScoreBreakdown> {
    let addr = start_server();
    let mut cfg = RemoteConfig::new(format!("http://{addr}"));
    cfg.batch_size = 4;
    let backend = RemoteBackend::new(BackendId::new("overlap-demo", "1")?, cfg)?;
    backend.wait_until_ready(Duration::from_secs(10))?;
    println!("service health: {:?}", backend.health()?);

    let document = "Heavy rain flooded the valley roads. Schools closed for two days. \
                    Volunteers filled sandbags near the river. Power returned on Friday.";
    let summary = "Rain flooded valley roads. Schools stayed closed for a week.";
    let mat = matrix_for_texts(document, summary, Granularity::Sentence, Granularity::Sentence, &backend, None)?;
    let breakdown = score_zs(&mat, &ZsConfig::default())?;
    println!("per-sentence {:?}", breakdown.per_sentence);
    println!("final {:.4}", breakdown.final_score);
    Ok(breakdown)
}

fn main() -> nli_consistency::Result<()> {
    run_example().map(|_| ())
}
