use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use motionalign::embedding::{
    tokenize, CachedProvider, EmbeddingProvider, ProviderSpec, RemoteConfig, RemoteProvider,
    StubProvider,
};
use motionalign::renderer::FrameImage;
use motionalign::Error;
use serde_json::{json, Value};

const WORDS: [&str; 12] = [
    "walk", "forward", "slowly", "today", "jump", "high", "up", "again", "turn", "left", "quick",
    "now",
];

#[test]
fn stub_cosine_grows_with_token_overlap() {
    let p = StubProvider::new(512, 3).unwrap();
    let base = p.embed_text("walk forward slowly today").unwrap();
    for (start, stride) in [(4, 1), (8, 1), (5, 2)] {
        let mut last = f64::NEG_INFINITY;
        for shared in 0..=4 {
            let mut words: Vec<&str> = WORDS[..shared].to_vec();
            words.extend((0..4 - shared).map(|i| WORDS[(start + i * stride) % 8 + 4]));
            let other = p.embed_text(&words.join(" ")).unwrap();
            let c = base.cosine(&other);
            assert!(c > last, "{shared} shared tokens: {c} <= {last}");
            last = c;
        }
        assert!((last - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn stub_is_deterministic_and_seeded() {
    let a = StubProvider::new(64, 1).unwrap();
    let b = StubProvider::new(64, 1).unwrap();
    let c = StubProvider::new(64, 2).unwrap();
    let t = "a person waves";
    assert_eq!(a.embed_text(t).unwrap(), b.embed_text(t).unwrap());
    assert_ne!(a.embed_text(t).unwrap(), c.embed_text(t).unwrap());
    assert_eq!(
        a.embed_text(t).unwrap(),
        a.embed_text("A PERSON, waves!").unwrap()
    );
    assert_eq!(tokenize("Turn-left  twice"), vec!["turn", "left", "twice"]);
    let img = FrameImage::filled(224, 224, [200, 10, 10]);
    assert_eq!(a.embed_image(&img).unwrap(), b.embed_image(&img).unwrap());
    assert!((a.embed_text(t).unwrap().norm() - 1.0).abs() <= 1e-12);
    assert!(a.embed_text("   ").is_err());
}

#[test]
fn cached_stub_matches_uncached() {
    let dir = tempfile::tempdir().unwrap();
    let cached = CachedProvider::new(StubProvider::new(32, 4).unwrap(), dir.path()).unwrap();
    let plain = StubProvider::new(32, 4).unwrap();
    for t in ["jump", "jump", "bow down"] {
        assert_eq!(cached.embed_text(t).unwrap(), plain.embed_text(t).unwrap());
    }
    let reopened = CachedProvider::new(StubProvider::new(32, 4).unwrap(), dir.path()).unwrap();
    assert_eq!(
        reopened.embed_text("bow down").unwrap(),
        plain.embed_text("bow down").unwrap()
    );
    assert_eq!(cached.provider_id(), plain.provider_id());
}

#[derive(Clone, Copy)]
enum Behaviour {
    Ok,
    FailThenOk(usize),
    BadRequest,
    WrongDim,
}

struct Mock {
    behaviour: Behaviour,
    dim: usize,
    hits: AtomicUsize,
}

async fn embed(State(m): State<Arc<Mock>>, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    let hit = m.hits.fetch_add(1, Ordering::SeqCst);
    let n = body
        .get("texts")
        .or_else(|| body.get("images"))
        .and_then(Value::as_array)
        .map_or(0, Vec::len);
    let dim = match m.behaviour {
        Behaviour::BadRequest => return (StatusCode::BAD_REQUEST, Json(json!({"error": "bad"}))),
        Behaviour::FailThenOk(k) if hit < k => {
            return (
                StatusCode::INTERNAL_SERVER_ERROR,
                Json(json!({"error": "busy"})),
            )
        }
        Behaviour::WrongDim => m.dim + 1,
        _ => m.dim,
    };
    let vectors: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..dim).map(|j| (i + j + 1) as f64).collect())
        .collect();
    (
        StatusCode::OK,
        Json(json!({"vectors": vectors, "dim": dim, "model": "mock"})),
    )
}

/// Serves the mock on an ephemeral port from a background runtime.
fn serve(behaviour: Behaviour, dim: usize) -> (SocketAddr, Arc<Mock>) {
    let mock = Arc::new(Mock {
        behaviour,
        dim,
        hits: AtomicUsize::new(0),
    });
    let app = Router::new()
        .route("/embed_text", post(embed))
        .route("/embed_image", post(embed))
        .with_state(mock.clone());
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(1)
            .enable_all()
            .build()
            .unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    (rx.recv().unwrap(), mock)
}

fn client(addr: SocketAddr, dim: usize) -> RemoteProvider {
    let mut cfg = RemoteConfig::new(format!("http://{addr}"));
    cfg.dim = dim;
    cfg.retries = 2;
    cfg.backoff_ms = 5;
    cfg.timeout_ms = 5_000;
    RemoteProvider::new(cfg).unwrap()
}

#[test]
fn remote_returns_service_vectors() {
    let (addr, mock) = serve(Behaviour::Ok, 4);
    let p = client(addr, 4);
    assert_eq!(
        p.embed_text("walk").unwrap().as_slice(),
        &[1.0, 2.0, 3.0, 4.0]
    );
    let two = p.embed_texts(&["a", "b"]).unwrap();
    assert_eq!(two[1].as_slice(), &[2.0, 3.0, 4.0, 5.0]);
    let img = p.embed_image(&FrameImage::filled(8, 8, [0, 0, 0])).unwrap();
    assert_eq!(img.dim(), 4);
    assert_eq!(mock.hits.load(Ordering::SeqCst), 3);
    assert!(p.provider_id().contains("d4"));
}

#[test]
fn remote_retries_server_errors() {
    let (addr, mock) = serve(Behaviour::FailThenOk(2), 3);
    let p = client(addr, 3);
    assert_eq!(p.embed_text("walk").unwrap().dim(), 3);
    assert_eq!(mock.hits.load(Ordering::SeqCst), 3);

    let (addr, mock) = serve(Behaviour::FailThenOk(10), 3);
    match client(addr, 3).embed_text("walk").unwrap_err() {
        Error::Transport {
            attempts, status, ..
        } => {
            assert_eq!(attempts, 3);
            assert_eq!(status, Some(500));
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(mock.hits.load(Ordering::SeqCst), 3);
}

#[test]
fn remote_client_errors_are_not_retried() {
    let (addr, mock) = serve(Behaviour::BadRequest, 3);
    match client(addr, 3).embed_text("walk").unwrap_err() {
        Error::Transport {
            attempts, status, ..
        } => {
            assert_eq!(attempts, 1);
            assert_eq!(status, Some(400));
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(mock.hits.load(Ordering::SeqCst), 1);
}

#[test]
fn remote_dimension_mismatch_is_reported() {
    let (addr, _) = serve(Behaviour::WrongDim, 3);
    let err = client(addr, 3).embed_text("walk").unwrap_err();
    assert!(matches!(err, Error::ConfigMismatch(_)), "{err:?}");
}

#[test]
fn unreachable_endpoint_is_a_transport_error() {
    let addr = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap();
    let err = client(addr, 3).embed_text("walk").unwrap_err();
    match err {
        Error::Transport {
            attempts, status, ..
        } => {
            assert_eq!(attempts, 3);
            assert_eq!(status, None);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn provider_spec_round_trips_and_builds() {
    let spec = ProviderSpec::Stub { dim: 16, seed: 2 };
    let text = serde_json::to_string(&spec).unwrap();
    let back: ProviderSpec = serde_json::from_str(&text).unwrap();
    assert_eq!(back, spec);
    assert_eq!(back.build(None).unwrap().dimension(), 16);
    assert!(RemoteProvider::new(RemoteConfig::new("ftp://x")).is_err());
}
