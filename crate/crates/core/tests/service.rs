mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use malleable::backend::demo::demo_model;
use malleable::backend::LogitBackend;
use malleable::decoder::plain_greedy;
use malleable::modularizer::Extractor;
use malleable::prompt::AttributeKind;
use malleable::service::{router, AppState, GenerateEvent};
use serde_json::{json, Value};
use tower::ServiceExt;

const EMAIL: &str = "Write a concise and formal email to my boss asking for a one-week extension \
in two paragraphs, but keep the closing friendly. No bullet point.";
const PHONES: &str = "Write a funny blog post comparing the price of iPhone 15 and Pixel 8";

struct Harness {
    state: Arc<AppState>,
    _dir: tempfile::TempDir,
}

impl Harness {
    fn with(backend: Arc<dyn LogitBackend>) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let state = Arc::new(AppState::new(backend, Extractor::rules(), dir.path()));
        Self { state, _dir: dir }
    }

    fn new() -> Self {
        Self::with(Arc::new(demo_model()))
    }

    async fn call(&self, method: &str, uri: &str, body: Option<String>, ws: Option<&str>) -> (StatusCode, Vec<u8>) {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(ws) = ws {
            req = req.header("x-steer-workspace", ws);
        }
        let req = req
            .header("content-type", "application/json")
            .body(body.map(Body::from).unwrap_or_else(Body::empty))
            .unwrap();
        let res = router(self.state.clone()).oneshot(req).await.unwrap();
        let status = res.status();
        let bytes = res.into_body().collect().await.unwrap().to_bytes().to_vec();
        (status, bytes)
    }

    async fn json(&self, method: &str, uri: &str, body: Value) -> (StatusCode, Value) {
        let (s, b) = self.call(method, uri, Some(body.to_string()), None).await;
        (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
    }

    async fn parse(&self, text: &str) -> Value {
        let (s, v) = self.json("POST", "/api/parse", json!({ "prompt": text })).await;
        assert_eq!(s, StatusCode::OK, "{v}");
        v
    }

    async fn stream(&self, body: Value) -> Vec<GenerateEvent> {
        let (s, b) = self.call("POST", "/api/generate", Some(body.to_string()), None).await;
        assert_eq!(s, StatusCode::OK, "{}", String::from_utf8_lossy(&b));
        String::from_utf8(b)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect()
    }
}

fn token_texts(events: &[GenerateEvent]) -> Vec<String> {
    events
        .iter()
        .filter_map(|e| match e {
            GenerateEvent::Token { text, .. } => Some(text.clone()),
            _ => None,
        })
        .collect()
}

#[tokio::test]
async fn parse_email_fixture_kinds() {
    let h = Harness::new();
    let v = h.parse(EMAIL).await;
    let kinds: Vec<AttributeKind> = v["attributes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| serde_json::from_value(a["kind"].clone()).unwrap())
        .collect();
    let count = |k| kinds.iter().filter(|x| **x == k).count();
    assert_eq!(count(AttributeKind::Continuous), 3);
    assert_eq!(count(AttributeKind::Categorical), 1);
    assert_eq!(count(AttributeKind::Numeric), 1);
}

#[tokio::test]
async fn parse_rejects_empty_input() {
    let h = Harness::new();
    let (s, _) = h.call("POST", "/api/parse", None, None).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = h.json("POST", "/api/parse", json!({ "prompt": "  " })).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = h.call("POST", "/api/parse", Some("{not json".into()), None).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn parse_is_deterministic() {
    let h = Harness::new();
    let body = json!({ "prompt": PHONES }).to_string();
    let a = h.call("POST", "/api/parse", Some(body.clone()), None).await;
    let b = h.call("POST", "/api/parse", Some(body), None).await;
    assert_eq!(a, b);
}

#[tokio::test]
async fn options_and_bind() {
    let h = Harness::new();
    let (s, v) = h
        .json("POST", "/api/options", json!({ "prompt": PHONES, "selected": "price" }))
        .await;
    assert_eq!(s, StatusCode::OK);
    let n = v["options"].as_array().unwrap().len();
    assert!((3..=5).contains(&n));

    let prompt = h.parse("Write a post about cats").await;
    let start = "Write a post about cats".find("cats").unwrap();
    let (s, v) = h
        .json(
            "POST",
            "/api/bind",
            json!({ "prompt": prompt, "span": [start, start + 4], "kind": "categorical" }),
        )
        .await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert!(v["attributes"].as_array().unwrap().iter().any(|a| a["anchorText"] == "cats"));

    let (s, _) = h.json("POST", "/api/enrich", json!({ "prompt": PHONES })).await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test]
async fn stream_order_and_pass_count() {
    let h = Harness::new();
    let prompt = h.parse(PHONES).await;
    let config = json!({ "lambda_map": { "funny": 2.0 }, "choice_map": { "price": "price" }, "max_tokens": 12 });
    let events = h.stream(json!({ "prompt": prompt, "config": config })).await;

    let positions: Vec<usize> = events
        .iter()
        .filter_map(|e| match e {
            GenerateEvent::Token { position, .. } => Some(*position),
            _ => None,
        })
        .collect();
    assert!(!positions.is_empty());
    assert!(positions.windows(2).all(|w| w[0] < w[1]));
    let done: Vec<_> = events.iter().filter(|e| matches!(e, GenerateEvent::Done { .. })).collect();
    assert_eq!(done.len(), 1);
    let Some(GenerateEvent::Done { passes, ledger, .. }) = events.last() else {
        panic!("done must be last");
    };
    let n = positions.len() as u64;
    assert_eq!(passes.stepping, 3 * n);
    assert_eq!(ledger.forward_passes, passes.stepping + passes.terminal);
}

#[tokio::test]
async fn same_request_same_tokens() {
    let h = Harness::new();
    let prompt = h.parse(PHONES).await;
    let config = json!({
        "lambda_map": { "funny": 1.5 },
        "choice_map": { "price": "price" },
        "max_tokens": 10,
        "seed": 7,
        "decode_mode": { "mode": "sampled", "temperature": 1.0 },
    });
    let a = h.stream(json!({ "prompt": prompt, "config": config })).await;
    let b = h.stream(json!({ "prompt": prompt, "config": config })).await;
    assert_eq!(token_texts(&a), token_texts(&b));
}

#[tokio::test]
async fn disengaged_stream_matches_plain_decode() {
    let backend = Arc::new(demo_model());
    let h = Harness::with(backend.clone());
    let prompt = h.parse("Write a funny and formal blog post").await;
    let base = prompt["base"].as_str().unwrap().to_string();
    let config = json!({ "lambda_map": { "funny": 0.0, "formal": 0.0 }, "choice_map": {}, "max_tokens": 15 });
    let events = h.stream(json!({ "prompt": prompt, "config": config })).await;
    let plain = plain_greedy(backend.as_ref(), &base, 15).unwrap();
    let expected: Vec<String> = plain
        .tokens
        .iter()
        .map(|t| backend.vocabulary().token(*t).unwrap().to_string())
        .collect();
    assert_eq!(token_texts(&events), expected);
}

#[tokio::test]
async fn invalid_config_is_rejected_before_streaming() {
    let h = Harness::new();
    let prompt = h.parse(PHONES).await;
    let config = json!({ "lambda_map": { "funny": 0.7 }, "choice_map": { "price": "price" } });
    let (s, _) = h.json("POST", "/api/generate", json!({ "prompt": prompt, "config": config })).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = h.json("POST", "/api/generate", json!({})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn backend_failure_mid_stream_stores_failed_node() {
    let h = Harness::with(Arc::new(common::Flaky::new(demo_model(), 3)));
    let prompt = h.parse(PHONES).await;
    let config = json!({ "lambda_map": { "funny": 1.0 }, "choice_map": { "price": "price" }, "max_tokens": 12 });
    let events = h.stream(json!({ "prompt": prompt, "config": config })).await;
    let Some(GenerateEvent::Error { node_id: Some(id), .. }) = events.last() else {
        panic!("expected a terminal error event, got {events:?}");
    };
    assert!(!events.iter().any(|e| matches!(e, GenerateEvent::Done { .. })));
    let (s, v) = h.json("GET", "/api/versions", Value::Null).await;
    assert_eq!(s, StatusCode::OK);
    let node = &v["nodes"][*id as usize];
    assert_eq!(node["failed"], true);
}

#[tokio::test]
async fn versions_revert_record_and_report() {
    let h = Harness::new();
    let prompt = h.parse(PHONES).await;
    for lambda in [1.0, 2.0] {
        let config = json!({ "lambda_map": { "funny": lambda }, "choice_map": { "price": "price" }, "max_tokens": 8 });
        let (s, v) = h
            .json("POST", "/api/generate", json!({ "prompt": prompt, "config": config, "stream": false }))
            .await;
        assert_eq!(s, StatusCode::OK, "{v}");
    }
    let (_, v) = h.json("GET", "/api/versions?size_by=funny", Value::Null).await;
    let nodes = v["nodes"].as_array().unwrap();
    assert_eq!(nodes.len(), 2);
    assert_eq!(nodes[1]["parent_id"], 0);
    assert_eq!(nodes[0]["branch_row"], nodes[1]["branch_row"]);
    assert_eq!(v["encodings"].as_array().unwrap().len(), 2);

    let (s, v) = h.json("POST", "/api/versions/0/revert", Value::Null).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["config"]["lambda_map"]["funny"], 1.0);

    let (s, v) = h.json("GET", "/api/record/1", Value::Null).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["lambdas"][0], 2.0);

    let (s, v) = h.json("GET", "/api/record/1/attribution", Value::Null).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["attributes"][0]["attribute_id"], "funny");

    let (s, _) = h.json("GET", "/api/record/9", Value::Null).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = h.call("DELETE", "/api/versions/0", None, None).await;
    assert_eq!(s, StatusCode::NO_CONTENT);
    let (s, _) = h.json("POST", "/api/versions/0/revert", Value::Null).await;
    assert_eq!(s, StatusCode::GONE);
}

#[tokio::test]
async fn workspaces_are_isolated() {
    let h = Harness::new();
    let prompt = h.parse(PHONES).await;
    let config = json!({ "lambda_map": { "funny": 1.0 }, "choice_map": { "price": "price" }, "max_tokens": 4 });
    let body = json!({ "prompt": prompt, "config": config, "stream": false }).to_string();
    let (s, _) = h.call("POST", "/api/generate", Some(body), Some("alpha")).await;
    assert_eq!(s, StatusCode::OK);
    let (_, a) = h.call("GET", "/api/versions", None, Some("alpha")).await;
    let (_, b) = h.call("GET", "/api/versions", None, Some("beta")).await;
    let a: Value = serde_json::from_slice(&a).unwrap();
    let b: Value = serde_json::from_slice(&b).unwrap();
    assert_eq!(a["nodes"].as_array().unwrap().len(), 1);
    assert_eq!(b["nodes"].as_array().unwrap().len(), 0);
    let (s, _) = h.call("GET", "/api/versions", None, Some("../etc")).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn logprobs_endpoint_answers_protocol() {
    let h = Harness::new();
    let (s, v) = h.json("POST", "/api/logprobs", json!({ "contexts": [[2, 3, 4]], "want": "logprobs" })).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["logprobs"].as_array().unwrap().len(), 1);
}
