//! Client side of the model-service protocol, against in-process stub
//! servers.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Value};

use omgm_core::corpus::ImageRef;
use omgm_core::index::{IndexMetadata, IndexOptions};
use omgm_core::pipeline::{build_summary_index, run_pipeline, PipelineConfig};
use omgm_core::provider::wire::{
    DenseResponse, EmbedItem, EmbedRequest, ErrorResponse, FusedResponse, GenerateRequest, GenerateResponse,
    HealthResponse, Modality, ScoreRequest, ScoreResponse,
};
use omgm_core::provider::{
    DeterministicProvider, GenerateParams, HttpProvider, Provider, ProviderEndpoint, ProviderError, RetryPolicy,
};
use omgm_core::synthetic::{generate, SyntheticSpec};
use omgm_core::Corpus;

fn fixture(name: &str) -> Value {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/wire").join(name);
    serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap()
}

fn serve(router: Router) -> String {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(4)
            .enable_all()
            .build()
            .unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, router).await.unwrap();
        });
    });
    format!("http://{}", rx.recv().unwrap())
}

fn client(url: &str) -> HttpProvider {
    let mut ep = ProviderEndpoint::new(url);
    ep.retry = RetryPolicy {
        max_retries: 2,
        backoff_ms: 1,
    };
    ep.timeout_ms = 5_000;
    HttpProvider::new(ep).unwrap()
}

type Log = Arc<Mutex<Vec<Value>>>;

/// Replays the golden responses and records every request body.
fn golden_server() -> (String, Log) {
    let log: Log = Arc::default();
    async fn embed(State(log): State<Log>, Json(body): Json<Value>) -> Json<Value> {
        let name = match body["modality"].as_str().unwrap() {
            "text" => "embed_text",
            "image" => "embed_image",
            _ => "embed_fused",
        };
        log.lock().unwrap().push(body);
        Json(fixture(&format!("{name}.response.json")))
    }
    async fn score(State(log): State<Log>, Json(body): Json<Value>) -> Json<Value> {
        log.lock().unwrap().push(body);
        Json(fixture("score_pairs.response.json"))
    }
    async fn gen(State(log): State<Log>, Json(body): Json<Value>) -> Json<Value> {
        log.lock().unwrap().push(body);
        Json(fixture("generate.response.json"))
    }
    let router = Router::new()
        .route("/v1/embed", post(embed))
        .route("/v1/score_pairs", post(score))
        .route("/v1/generate", post(gen))
        .route("/v1/health", get(|| async { Json(fixture("health.response.json")) }))
        .with_state(log.clone());
    (serve(router), log)
}

fn round_trip<T: serde::Serialize + serde::de::DeserializeOwned>(name: &str) {
    let v = fixture(name);
    let parsed: T = serde_json::from_value(v.clone()).unwrap_or_else(|e| panic!("{name}: {e}"));
    assert_eq!(serde_json::to_value(&parsed).unwrap(), v, "{name}");
}

#[test]
fn golden_fixtures_round_trip_through_wire_types() {
    round_trip::<EmbedRequest>("embed_text.request.json");
    round_trip::<DenseResponse>("embed_text.response.json");
    round_trip::<EmbedRequest>("embed_image.request.json");
    round_trip::<DenseResponse>("embed_image.response.json");
    round_trip::<EmbedRequest>("embed_fused.request.json");
    round_trip::<FusedResponse>("embed_fused.response.json");
    round_trip::<ScoreRequest>("score_pairs.request.json");
    round_trip::<ScoreResponse>("score_pairs.response.json");
    round_trip::<GenerateRequest>("generate.request.json");
    round_trip::<GenerateResponse>("generate.response.json");
    round_trip::<HealthResponse>("health.response.json");
    round_trip::<ErrorResponse>("error.response.json");
}

#[test]
fn fused_fixture_has_32_unit_rows() {
    let r: FusedResponse = serde_json::from_value(fixture("embed_fused.response.json")).unwrap();
    assert_eq!(r.rows, 32);
    for m in &r.matrices {
        assert_eq!(m.len(), r.rows * r.dims);
        for row in m.chunks(r.dims) {
            let n: f64 = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn client_speaks_golden_protocol() {
    let (url, log) = golden_server();
    let p = client(&url);

    let text = p
        .embed_text_detailed(&["Lake Wanaka is a lake in New Zealand.", "The Dolomites are a mountain range."])
        .unwrap();
    assert_eq!(text.vectors[1].values(), &[0.0, 0.6, 0.8, 0.0]);
    assert_eq!(text.truncated, vec![false, true]);

    let inline: ImageRef = serde_json::from_value(json!({"ref_id": "q1", "bytes_b64": "iVBORw0KGgo="})).unwrap();
    let images = p
        .embed_image(&[ImageRef::uri("wanaka", "https://example.org/wanaka.jpg"), inline])
        .unwrap();
    assert_eq!(images.len(), 2);
    assert!(images.iter().all(|v| v.is_normalized()));

    let m = p
        .embed_fused(&ImageRef::uri("wanaka", "https://example.org/wanaka.jpg"), "Where is this lake?")
        .unwrap();
    assert_eq!((m.rows(), m.dims()), (32, 2));

    let scores = p.score_text_pairs("red fox den", &["red fox", "blue whale"]).unwrap();
    assert!(scores[0] > scores[1]);

    let answer = p
        .generate("- Question: How tall is it?\nThe answer is:", &GenerateParams::default())
        .unwrap();
    assert_eq!(answer, "About 12 metres.");

    let health = p.health().unwrap();
    assert_eq!(health.status, "ok");
    assert_eq!(health.dims["fused"], 2);

    let sent = log.lock().unwrap().clone();
    let expected = [
        "embed_text.request.json",
        "embed_image.request.json",
        "embed_fused.request.json",
        "score_pairs.request.json",
        "generate.request.json",
    ];
    assert_eq!(sent.len(), expected.len());
    for (body, name) in sent.iter().zip(expected) {
        assert_eq!(body, &fixture(name), "{name}");
    }
}

#[test]
fn service_error_object_is_surfaced() {
    let router = Router::new().route(
        "/v1/embed",
        post(|| async { (StatusCode::PAYLOAD_TOO_LARGE, Json(fixture("error.response.json"))) }),
    );
    let p = client(&serve(router));
    match p.embed_text(&["x"]).unwrap_err() {
        ProviderError::Service { status, code, .. } => {
            assert_eq!(status, 413);
            assert_eq!(code, "batch_too_large");
        }
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn server_errors_are_retried() {
    let hits = Arc::new(AtomicUsize::new(0));
    let h = hits.clone();
    let router = Router::new().route(
        "/v1/generate",
        post(move || {
            let h = h.clone();
            async move {
                if h.fetch_add(1, Ordering::SeqCst) < 2 {
                    (StatusCode::SERVICE_UNAVAILABLE, Json(json!({"error": {"code": "busy", "message": "later"}})))
                } else {
                    (StatusCode::OK, Json(json!({"text": "ok"})))
                }
            }
        }),
    );
    let p = client(&serve(router));
    assert_eq!(p.generate("p", &GenerateParams::default()).unwrap(), "ok");
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[test]
fn retries_are_bounded() {
    let hits = Arc::new(AtomicUsize::new(0));
    let h = hits.clone();
    let router = Router::new().route(
        "/v1/generate",
        post(move || {
            h.fetch_add(1, Ordering::SeqCst);
            async { (StatusCode::INTERNAL_SERVER_ERROR, "boom") }
        }),
    );
    let p = client(&serve(router));
    assert!(matches!(p.generate("p", &GenerateParams::default()), Err(ProviderError::Protocol(_))));
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let hits = Arc::new(AtomicUsize::new(0));
    let h = hits.clone();
    let router = Router::new().route(
        "/v1/generate",
        post(move || {
            h.fetch_add(1, Ordering::SeqCst);
            async { (StatusCode::BAD_REQUEST, Json(json!({"error": {"code": "bad", "message": "no"}}))) }
        }),
    );
    let p = client(&serve(router));
    assert!(matches!(p.generate("p", &GenerateParams::default()), Err(ProviderError::Service { status: 400, .. })));
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}

fn fixed(body: Value) -> String {
    serve(Router::new().route("/v1/embed", post(move || async move { Json(body) })))
}

#[test]
fn protocol_violations_are_rejected() {
    let short_rows = fixed(json!({"dims": 2, "rows": 16, "matrices": [vec![0.0; 32]]}));
    let img = ImageRef::uri("x", "https://example.org/x.jpg");
    assert!(matches!(client(&short_rows).embed_fused(&img, "t"), Err(ProviderError::Protocol(_))));

    let wrong_count = fixed(json!({"dims": 2, "vectors": [[1.0, 0.0]]}));
    assert!(matches!(client(&wrong_count).embed_text(&["a", "b"]), Err(ProviderError::Protocol(_))));

    let not_unit = fixed(json!({"dims": 2, "vectors": [[3.0, 4.0]]}));
    assert!(matches!(client(&not_unit).embed_text(&["a"]), Err(ProviderError::Protocol(_))));

    let ragged = fixed(json!({"dims": 2, "vectors": [[1.0, 0.0, 0.0]]}));
    assert!(matches!(client(&ragged).embed_text(&["a"]), Err(ProviderError::Protocol(_))));

    let garbage = serve(Router::new().route("/v1/embed", post(|| async { "not json" })));
    assert!(matches!(client(&garbage).embed_text(&["a"]), Err(ProviderError::Protocol(_))));
}

#[test]
fn unreachable_service_is_transport_error() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let p = client(&format!("http://127.0.0.1:{port}"));
    assert!(matches!(p.embed_text(&["a"]), Err(ProviderError::Transport(_))));
}

#[test]
fn batches_are_chunked_in_order() {
    let sizes: Arc<Mutex<Vec<usize>>> = Arc::default();
    let s = sizes.clone();
    let router = Router::new().route(
        "/v1/embed",
        post(move |Json(req): Json<EmbedRequest>| {
            let s = s.clone();
            async move {
                s.lock().unwrap().push(req.items.len());
                let vectors: Vec<Vec<f64>> = req
                    .items
                    .iter()
                    .map(|it| {
                        let i: usize = it.text.as_deref().unwrap().parse().unwrap();
                        let mut v = vec![0.0; 8];
                        v[i] = 1.0;
                        v
                    })
                    .collect();
                Json(json!({"dims": 8, "vectors": vectors}))
            }
        }),
    );
    let mut ep = ProviderEndpoint::new(serve(router));
    ep.max_batch = 2;
    let p = HttpProvider::new(ep).unwrap();
    let out = p.embed_text(&["0", "1", "2", "3", "4"]).unwrap();
    assert_eq!(*sizes.lock().unwrap(), vec![2, 2, 1]);
    for (i, v) in out.iter().enumerate() {
        assert_eq!(v.values()[i], 1.0);
    }
}

#[test]
fn in_flight_requests_are_bounded() {
    let current = Arc::new(AtomicUsize::new(0));
    let peak = Arc::new(AtomicUsize::new(0));
    let (c, pk) = (current.clone(), peak.clone());
    let router = Router::new().route(
        "/v1/generate",
        post(move || {
            let (c, pk) = (c.clone(), pk.clone());
            async move {
                let now = c.fetch_add(1, Ordering::SeqCst) + 1;
                pk.fetch_max(now, Ordering::SeqCst);
                tokio::time::sleep(Duration::from_millis(30)).await;
                c.fetch_sub(1, Ordering::SeqCst);
                Json(json!({"text": "ok"}))
            }
        }),
    );
    let mut ep = ProviderEndpoint::new(serve(router));
    ep.max_in_flight = 2;
    let p = HttpProvider::new(ep).unwrap();
    std::thread::scope(|s| {
        for _ in 0..8 {
            s.spawn(|| p.generate("p", &GenerateParams::default()).unwrap());
        }
    });
    assert!(peak.load(Ordering::SeqCst) <= 2, "peak {}", peak.load(Ordering::SeqCst));
    assert!(peak.load(Ordering::SeqCst) >= 1);
}

#[test]
fn image_sources_map_to_wire_items() {
    let (url, log) = golden_server();
    let p = client(&url);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("img.bin");
    std::fs::write(&path, [1u8, 2, 3]).unwrap();
    let local = ImageRef::uri("local", format!("file://{}", path.display()));
    p.embed_image(&[local.clone(), ImageRef::placeholder()]).unwrap_or_default();
    p.embed_fused(&ImageRef::placeholder(), "just text").unwrap();
    let sent = log.lock().unwrap().clone();
    let items: Vec<EmbedItem> = serde_json::from_value(sent[0]["items"].clone()).unwrap();
    assert_eq!(items[0].image_b64.as_deref(), Some("AQID"));
    assert_eq!(items[1].image_uri.as_deref(), Some("placeholder://zero"));
    let fused: EmbedRequest = serde_json::from_value(sent[1].clone()).unwrap();
    assert_eq!(fused.modality, Modality::Fused);
    assert_eq!(
        fused.items[0],
        EmbedItem {
            text: Some("just text".into()),
            ..Default::default()
        }
    );

    let missing = ImageRef::uri("gone", "/definitely/not/here.jpg");
    assert!(matches!(p.embed_image(&[missing]), Err(ProviderError::Resolution { .. })));
}

/// A stub service that answers with the deterministic provider, keyed by
/// the image uri.
fn deterministic_server() -> String {
    let p = Arc::new(DeterministicProvider::default());
    let image_of = |it: &EmbedItem| it.image_uri.as_ref().map(|u| ImageRef::uri(u.clone(), u.clone()));
    let pe = p.clone();
    let embed = move |Json(req): Json<EmbedRequest>| {
        let p = pe.clone();
        async move {
            match req.modality {
                Modality::Text => {
                    let texts: Vec<&str> = req.items.iter().map(|i| i.text.as_deref().unwrap()).collect();
                    let out = p.embed_text_detailed(&texts).unwrap();
                    Json(json!({
                        "dims": out.vectors[0].dims(),
                        "vectors": out.vectors.iter().map(|v| v.values().to_vec()).collect::<Vec<_>>(),
                        "truncated": out.truncated,
                    }))
                }
                Modality::Image => {
                    let imgs: Vec<ImageRef> = req.items.iter().map(|i| image_of(i).unwrap()).collect();
                    let out = p.embed_image(&imgs).unwrap();
                    Json(json!({
                        "dims": out[0].dims(),
                        "vectors": out.iter().map(|v| v.values().to_vec()).collect::<Vec<_>>(),
                    }))
                }
                Modality::Fused => {
                    let imgs: Vec<ImageRef> = req
                        .items
                        .iter()
                        .map(|i| image_of(i).unwrap_or_else(ImageRef::placeholder))
                        .collect();
                    let pairs: Vec<(&ImageRef, &str)> = imgs
                        .iter()
                        .zip(&req.items)
                        .map(|(im, it)| (im, it.text.as_deref().unwrap()))
                        .collect();
                    let out = p.embed_fused_batch(&pairs).unwrap();
                    Json(json!({
                        "dims": out[0].dims(),
                        "rows": out[0].rows(),
                        "matrices": out.iter().map(|m| m.values().to_vec()).collect::<Vec<_>>(),
                    }))
                }
            }
        }
    };
    let ps = p.clone();
    let score = move |Json(req): Json<ScoreRequest>| {
        let p = ps.clone();
        async move {
            let passages: Vec<&str> = req.passages.iter().map(String::as_str).collect();
            Json(json!({"scores": p.score_text_pairs(&req.query, &passages).unwrap()}))
        }
    };
    serve(
        Router::new()
            .route("/v1/embed", post(embed))
            .route("/v1/score_pairs", post(score)),
    )
}

#[test]
fn pipeline_over_http_matches_in_process_provider() {
    let bench = generate(&SyntheticSpec {
        entities: 25,
        queries: 6,
        distractor_rate: 0.5,
        ..Default::default()
    })
    .unwrap();
    // The wire carries uris, not ref ids, so make them coincide.
    let relabel = |img: &ImageRef| {
        let u = format!("synthetic://{}", img.ref_id);
        ImageRef::uri(u.clone(), u)
    };
    let entities = bench
        .corpus
        .entities()
        .iter()
        .cloned()
        .map(|mut e| {
            e.main_image = e.main_image.as_ref().map(relabel);
            e
        })
        .collect();
    let corpus = Corpus::from_entities(entities).unwrap();
    let local = DeterministicProvider::default();
    let remote = client(&deterministic_server());
    let cfg = PipelineConfig::default();
    let idx_local = build_summary_index(&corpus, &local, IndexOptions::default(), IndexMetadata::default()).unwrap();
    let idx_remote = build_summary_index(&corpus, &remote, IndexOptions::default(), IndexMetadata::default()).unwrap();
    assert_eq!(idx_remote.metadata().provider_id, remote.id());
    for s in &bench.samples {
        let mut s = s.clone();
        s.image = relabel(&s.image);
        let a = run_pipeline(&s, &corpus, &idx_local, &local, &cfg, false).unwrap();
        let b = run_pipeline(&s, &corpus, &idx_remote, &remote, &cfg, false).unwrap();
        assert_eq!(a.stage1, b.stage1);
        assert_eq!(a.reranked, b.reranked);
        assert_eq!(a.context, b.context);
    }
}
