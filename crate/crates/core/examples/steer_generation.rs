// Steer the demo model with one continuous attribute at several strengths.

use malleable::backend::demo::demo_model;
use malleable::decoder::{generate, DecodeOptions, GenerationRecord};
use malleable::modularizer::Extractor;
use malleable::prompt::{set_lambda, SteeringConfig};

const PROMPT: &str = "Write a funny blog post comparing the price of iPhone 15 and Pixel 8";

pub fn run() -> malleable::Result<Vec<GenerationRecord>> {
    let backend = demo_model();
    let prompt = Extractor::rules().modularize(PROMPT)?.value;
    let mut config = SteeringConfig::defaults(&prompt);
    config.max_tokens = 24;
    let mut records = Vec::new();
    for lambda in [0.0, 1.0, 2.0, 3.0] {
        config = set_lambda(&prompt, &config, "funny", lambda)?;
        let record = generate(&prompt, &config, &backend, DecodeOptions::default())?;
        println!(
            "λ={lambda:<3} passes={:<3} {}",
            record.passes.stepping, record.text
        );
        records.push(record);
    }
    Ok(records)
}

#[allow(dead_code)]
fn main() -> malleable::Result<()> {
    run().map(drop)
}
