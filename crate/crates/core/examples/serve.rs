// Start the HTTP service on the demo model and walk through the API:
// parse, streamed generation, versions and the attribution report.
//
// `cargo run --example serve -- --hold` keeps the server up afterwards.

use std::io::{BufRead, BufReader};
use std::net::SocketAddr;
use std::sync::Arc;

use malleable::backend::demo::demo_model;
use malleable::modularizer::Extractor;
use malleable::service::{serve_in_background, AppState, GenerateEvent};
use serde_json::{json, Value};

pub fn run(workspace: &std::path::Path, hold: bool) -> Result<Vec<GenerateEvent>, Box<dyn std::error::Error>> {
    let state = AppState::new(Arc::new(demo_model()), Extractor::rules(), workspace);
    let addr = serve_in_background(Arc::new(state), SocketAddr::from(([127, 0, 0, 1], 0)))?;
    let base = format!("http://{addr}/api");
    let http = reqwest::blocking::Client::new();
    println!("listening on {addr}");

    let prompt: Value = http
        .post(format!("{base}/parse"))
        .json(&json!({ "prompt": "Write a funny blog post comparing the price of iPhone 15 and Pixel 8" }))
        .send()?
        .error_for_status()?
        .json()?;
    println!("base prompt: {}", prompt["base"]);

    let config = json!({
        "lambda_map": { "funny": 2.0 },
        "choice_map": { "price": "price" },
        "max_tokens": 12,
    });
    let stream = http
        .post(format!("{base}/generate"))
        .header("x-steer-workspace", "demo")
        .json(&json!({ "prompt": prompt, "config": config }))
        .send()?
        .error_for_status()?;
    let mut events = Vec::new();
    for line in BufReader::new(stream).lines() {
        let event: GenerateEvent = serde_json::from_str(&line?)?;
        match &event {
            GenerateEvent::Token { text, .. } => print!("{text} "),
            GenerateEvent::Done { node_id, passes, .. } => {
                println!("\ndone: version {node_id}, {} stepping passes", passes.stepping)
            }
            GenerateEvent::Error { message, .. } => println!("\nerror: {message}"),
            _ => {}
        }
        events.push(event);
    }

    let versions: Value = http
        .get(format!("{base}/versions?size_by=funny"))
        .header("x-steer-workspace", "demo")
        .send()?
        .error_for_status()?
        .json()?;
    println!("encodings: {}", versions["encodings"]);
    let report: Value = http
        .get(format!("{base}/record/0/attribution"))
        .header("x-steer-workspace", "demo")
        .send()?
        .error_for_status()?
        .json()?;
    println!("attribution: {}", report["attributes"]);

    if hold {
        println!("serving until interrupted");
        std::thread::park();
    }
    Ok(events)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    let hold = std::env::args().any(|a| a == "--hold");
    let dir = tempfile::tempdir()?;
    run(dir.path(), hold).map(drop)
}
