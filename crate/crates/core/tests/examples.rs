//! Every example runs to completion and produces sensible output.

mod parse_prompt {
    include!("../examples/parse_prompt.rs");
}
mod steer_generation {
    include!("../examples/steer_generation.rs");
}
mod attribution_spans {
    include!("../examples/attribution_spans.rs");
}
mod lambda_sweep {
    include!("../examples/lambda_sweep.rs");
}
mod version_graph {
    include!("../examples/version_graph.rs");
}
mod remote_backend {
    include!("../examples/remote_backend.rs");
}
mod serve {
    include!("../examples/serve.rs");
}

use malleable::attribution::Polarity;
use malleable::service::GenerateEvent;

#[test]
fn parse_prompt_splits_the_email() {
    let p = parse_prompt::run(
        "Write a concise and formal email to my boss asking for a one-week extension in two \
         paragraphs, but keep the closing friendly. No bullet point.",
    )
    .unwrap();
    assert_eq!(p.base(), "Write an email to my boss asking for a one-week extension.");
    assert_eq!(p.mod_set().count(), 3);
}

#[test]
fn steer_generation_changes_with_lambda() {
    let records = steer_generation::run().unwrap();
    assert_eq!(records.len(), 4);
    assert_ne!(records[0].tokens, records[3].tokens);
    for r in &records {
        assert_eq!(r.passes.stepping, 3 * r.len() as u64);
    }
}

#[test]
fn attribution_spans_reports_encouraged_tokens() {
    let report = attribution_spans::run().unwrap();
    let funny = report.iter().find(|r| r.attribute_id == "funny").unwrap();
    assert!(funny.spans.iter().any(|s| s.polarity == Polarity::Encouraged));
}

#[test]
fn lambda_sweep_has_seven_rows() {
    let report = lambda_sweep::run().unwrap();
    assert_eq!(report.rows.len(), 7);
    assert_eq!(report.rows[0].overlap, 1.0);
}

#[test]
fn version_graph_branches_on_widget_addition() {
    let dir = tempfile::tempdir().unwrap();
    let g = version_graph::run(dir.path()).unwrap();
    let rows: Vec<u32> = g.nodes().iter().map(|n| n.branch_row).collect();
    assert_eq!(rows, vec![0, 0, 0, 1]);
}

#[test]
fn remote_backend_matches_local() {
    let (local, remote) = remote_backend::run().unwrap();
    assert_eq!(local, remote);
}

#[test]
fn serve_streams_and_finishes() {
    let dir = tempfile::tempdir().unwrap();
    let events = serve::run(dir.path(), false).unwrap();
    assert!(matches!(events.last(), Some(GenerateEvent::Done { node_id: 0, .. })));
    assert!(events.iter().any(|e| matches!(e, GenerateEvent::Token { .. })));
}
