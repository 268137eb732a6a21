// Drive the decoder through the HTTP logits protocol. A local service
// exposes the demo model at `/api/logprobs`; the remote backend talks to
// it and must reproduce local decoding exactly.

use std::net::SocketAddr;
use std::sync::Arc;

use malleable::backend::demo::{demo_model, demo_tokens};
use malleable::backend::{RemoteBackend, RemoteConfig, Vocabulary};
use malleable::decoder::{generate, DecodeOptions};
use malleable::modularizer::Extractor;
use malleable::prompt::{set_lambda, SteeringConfig};
use malleable::service::{serve_in_background, AppState};

const PROMPT: &str = "Write a formal email to my boss asking for a one-week extension";

pub fn run() -> malleable::Result<(String, String)> {
    let dir = tempfile::tempdir()?;
    let state = AppState::new(Arc::new(demo_model()), Extractor::rules(), dir.path());
    let addr = serve_in_background(Arc::new(state), SocketAddr::from(([127, 0, 0, 1], 0)))?;

    let remote = RemoteBackend::new(RemoteConfig::new(
        format!("http://{addr}/api/logprobs"),
        Vocabulary::new(demo_tokens())?,
    ))?;
    let local = demo_model();

    let prompt = Extractor::rules().modularize(PROMPT)?.value;
    let mut config = set_lambda(&prompt, &SteeringConfig::defaults(&prompt), "formal", 2.0)?;
    config.max_tokens = 12;
    let a = generate(&prompt, &config, &local, DecodeOptions::default())?;
    let b = generate(&prompt, &config, &remote, DecodeOptions::default())?;
    println!("local:  {}", a.text);
    println!("remote: {}", b.text);
    println!("same tokens: {}", a.tokens == b.tokens);
    Ok((a.text, b.text))
}

#[allow(dead_code)]
fn main() -> malleable::Result<()> {
    run().map(drop)
}
