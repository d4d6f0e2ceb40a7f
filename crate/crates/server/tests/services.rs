//! Both services driven over real sockets.

use std::sync::Arc;

use envoy_types::pb::envoy::config::core::v3::{HeaderMap, HeaderValue};
use envoy_types::pb::envoy::service::ext_proc::v3::external_processor_client::ExternalProcessorClient;
use envoy_types::pb::envoy::service::ext_proc::v3::processing_request::Request as Event;
use envoy_types::pb::envoy::service::ext_proc::v3::processing_response::Response as Reply;
use envoy_types::pb::envoy::service::ext_proc::v3::{HttpBody, HttpHeaders, ProcessingRequest};
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::sync::oneshot;

use semrouter_core::{samples, ConfigStore, CostModel, Router, RoutingConfig};
use semrouter_server::extproc::{HEADER_CATEGORY, HEADER_REASONING};
use semrouter_server::sim_server::HEADER_REQUEST_ID;
use semrouter_server::{serve_extproc, serve_sim, DecisionLog, Gateway, SimSettings, UsageSink};

async fn start_sim(delay_scale: f64) -> (String, oneshot::Sender<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = oneshot::channel();
    let model = CostModel::from_yaml_str(samples::TABLE1_YAML).unwrap();
    let settings = SimSettings {
        delay_scale,
        ..SimSettings::default()
    };
    tokio::spawn(serve_sim(listener, model, settings, async {
        let _ = rx.await;
    }));
    (format!("http://{addr}/v1/chat/completions"), tx)
}

fn chat(prompt: &str) -> Value {
    json!({"model": "qwen3-30b", "messages": [{"role": "user", "content": prompt}]})
}

#[tokio::test]
async fn sim_uses_cell_and_replays_identically() {
    let (url, _stop) = start_sim(0.0).await;
    let client = reqwest::Client::new();
    let model = CostModel::from_yaml_str(samples::TABLE1_YAML).unwrap();
    let mean = model.cells("math").unwrap().on.mean_tokens;

    let send = |id: String| {
        client
            .post(&url)
            .header(HEADER_CATEGORY, "math")
            .header(HEADER_REASONING, "on")
            .header(HEADER_REQUEST_ID, id)
            .json(&chat("integral of x squared"))
            .send()
    };
    let first = send("replay-1".into()).await.unwrap();
    assert_eq!(first.status(), 200);
    let first = first.bytes().await.unwrap();
    let second = send("replay-1".into()).await.unwrap().bytes().await.unwrap();
    assert_eq!(first, second);

    let v: Value = serde_json::from_slice(&first).unwrap();
    let tokens = v["usage"]["total_tokens"].as_f64().unwrap();
    assert!(tokens >= 0.8 * mean - 1.0 && tokens <= 1.2 * mean + 1.0, "{tokens} vs {mean}");
}

#[tokio::test]
async fn sim_rejects_missing_or_unknown_category() {
    let (url, _stop) = start_sim(0.0).await;
    let client = reqwest::Client::new();
    let r = client.post(&url).json(&chat("hello")).send().await.unwrap();
    assert_eq!(r.status(), 400);
    let r = client
        .post(&url)
        .header(HEADER_CATEGORY, "astrology")
        .json(&chat("hello"))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), 400);
}

#[tokio::test]
async fn sim_delays_do_not_serialize() {
    // math ON latency is tens of seconds; scale it to a few hundred ms
    let (url, _stop) = start_sim(0.01).await;
    let client = reqwest::Client::new();
    let started = std::time::Instant::now();
    let mut handles = Vec::new();
    for i in 0..8 {
        let req = client
            .post(&url)
            .header(HEADER_CATEGORY, "math")
            .header(HEADER_REASONING, "on")
            .header(HEADER_REQUEST_ID, format!("par-{i}"))
            .json(&chat("x"))
            .send();
        handles.push(tokio::spawn(req));
    }
    let mut longest = 0.0f64;
    for h in handles {
        let v: Value = h.await.unwrap().unwrap().json().await.unwrap();
        longest = longest.max(v["simulation"]["latency_ms"].as_f64().unwrap() * 0.01);
    }
    let elapsed = started.elapsed().as_secs_f64() * 1000.0;
    assert!(elapsed < longest * 3.0, "elapsed {elapsed} ms, longest single {longest} ms");
}

fn headers_event(method: &str, path: &str) -> ProcessingRequest {
    let hv = |k: &str, v: &str| HeaderValue {
        key: k.into(),
        raw_value: v.as_bytes().to_vec(),
        ..Default::default()
    };
    ProcessingRequest {
        request: Some(Event::RequestHeaders(HttpHeaders {
            headers: Some(HeaderMap {
                headers: vec![hv(":method", method), hv(":path", path)],
            }),
            ..Default::default()
        })),
        ..Default::default()
    }
}

fn body_event(body: Vec<u8>, response: bool) -> ProcessingRequest {
    let b = HttpBody {
        body,
        end_of_stream: true,
        ..Default::default()
    };
    ProcessingRequest {
        request: Some(if response { Event::ResponseBody(b) } else { Event::RequestBody(b) }),
        ..Default::default()
    }
}

#[tokio::test]
async fn extproc_round_trip_records_usage() {
    let cfg = RoutingConfig::from_yaml_str(samples::ROUTER_YAML).unwrap();
    let store = Arc::new(ConfigStore::from_router("sample.yaml", Router::from_config(cfg).unwrap()));
    let usage = Arc::new(UsageSink::new());
    let gateway = Gateway::new(store, Arc::clone(&usage), DecisionLog::disabled());
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (stop, rx) = oneshot::channel::<()>();
    let server = tokio::spawn(serve_extproc(listener, gateway, async {
        let _ = rx.await;
    }));

    let mut client = ExternalProcessorClient::connect(format!("http://{addr}")).await.unwrap();
    let events = vec![
        headers_event("POST", "/v1/chat/completions"),
        body_event(serde_json::to_vec(&chat("derivative of a polynomial limit")).unwrap(), false),
        body_event(br#"{"usage":{"total_tokens":887}}"#.to_vec(), true),
    ];
    let mut responses = client
        .process(tokio_stream::iter(events))
        .await
        .unwrap()
        .into_inner();
    let mut kinds = Vec::new();
    while let Some(r) = responses.message().await.unwrap() {
        kinds.push(r.response.unwrap());
    }
    assert_eq!(kinds.len(), 3);
    assert!(matches!(kinds[0], Reply::RequestHeaders(_)));
    assert!(matches!(kinds[1], Reply::RequestBody(_)));
    assert!(matches!(kinds[2], Reply::ResponseBody(_)));
    let recs = usage.records();
    assert_eq!(recs.len(), 1);
    assert_eq!(recs[0].total_tokens, Some(887));

    stop.send(()).unwrap();
    server.await.unwrap().unwrap();
}
