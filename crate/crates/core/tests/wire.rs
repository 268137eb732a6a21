use malleable::backend::demo::demo_model;
use malleable::backend::{answer_logits_request, LogitsRequest, LogitsResponse, ToyModelSpec};

const REQUEST: &str = include_str!("fixtures/logits_request.json");
const RESPONSE: &str = include_str!("fixtures/logits_response.json");

#[test]
fn golden_request_round_trips_byte_identically() {
    let req: LogitsRequest = serde_json::from_str(REQUEST).unwrap();
    assert_eq!(serde_json::to_string(&req).unwrap(), REQUEST);
}

#[test]
fn golden_response_round_trips_byte_identically() {
    let resp: LogitsResponse = serde_json::from_str(RESPONSE).unwrap();
    assert_eq!(serde_json::to_string(&resp).unwrap(), RESPONSE);
}

#[test]
fn demo_model_still_answers_golden_request() {
    let req: LogitsRequest = serde_json::from_str(REQUEST).unwrap();
    let resp = answer_logits_request(&demo_model(), &req).unwrap();
    assert_eq!(serde_json::to_string(&resp).unwrap(), RESPONSE);
}

#[test]
fn golden_response_validates() {
    let resp: LogitsResponse = serde_json::from_str(RESPONSE).unwrap();
    let vocab = demo_model().spec().tokens.len();
    let rows = resp.into_validated(3, vocab).unwrap();
    assert_eq!(rows.len(), 3);
}

#[test]
fn toy_spec_file_round_trips() {
    let spec = demo_model().spec();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("spec.json");
    std::fs::write(&path, serde_json::to_string(&spec).unwrap()).unwrap();
    assert_eq!(ToyModelSpec::load(&path).unwrap(), spec);
}
